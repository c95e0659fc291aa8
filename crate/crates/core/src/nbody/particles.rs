use super::NbodyError;

pub type Vec3 = [f64; 3];

/// Particle state in a periodic cube of side `box_len`, with `G = 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleSet {
    pub box_len: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
    pub ids: Vec<u64>,
}

impl ParticleSet {
    pub fn new(box_len: f64) -> Self {
        Self {
            box_len,
            ..Default::default()
        }
    }

    pub fn with_capacity(box_len: f64, n: usize) -> Self {
        Self {
            box_len,
            positions: Vec::with_capacity(n),
            velocities: Vec::with_capacity(n),
            masses: Vec::with_capacity(n),
            ids: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: u64, mass: f64, pos: Vec3, vel: Vec3) {
        self.ids.push(id);
        self.masses.push(mass);
        self.positions.push(pos);
        self.velocities.push(vel);
    }

    /// Copy of the particles at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ParticleSet {
        let mut out = ParticleSet::with_capacity(self.box_len, indices.len());
        for &i in indices {
            out.push(self.ids[i], self.masses[i], self.positions[i], self.velocities[i]);
        }
        out
    }

    pub fn extend(&mut self, other: &ParticleSet) {
        self.ids.extend_from_slice(&other.ids);
        self.masses.extend_from_slice(&other.masses);
        self.positions.extend_from_slice(&other.positions);
        self.velocities.extend_from_slice(&other.velocities);
    }

    /// Reorder by ascending id.
    pub fn sort_by_id(&mut self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.ids[i]);
        *self = self.select(&order);
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn momentum(&self) -> Vec3 {
        let mut p = [0.0; 3];
        for (m, v) in self.masses.iter().zip(&self.velocities) {
            for k in 0..3 {
                p[k] += m * v[k];
            }
        }
        p
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.masses
            .iter()
            .zip(&self.velocities)
            .map(|(m, v)| 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum()
    }

    /// Map every coordinate into `[0, box_len)`.
    pub fn wrap(&mut self) {
        let l = self.box_len;
        for p in &mut self.positions {
            for x in p.iter_mut() {
                *x = wrap_coord(*x, l);
            }
        }
    }

    pub fn validate(&self) -> Result<(), NbodyError> {
        let n = self.ids.len();
        if self.positions.len() != n || self.velocities.len() != n || self.masses.len() != n {
            return Err(NbodyError::InvalidParticles("column lengths differ".into()));
        }
        if !(self.box_len > 0.0) {
            return Err(NbodyError::InvalidParticles("box length must be > 0".into()));
        }
        if let Some(i) = self.masses.iter().position(|&m| !(m > 0.0)) {
            return Err(NbodyError::InvalidParticles(format!(
                "particle {} has non-positive mass",
                self.ids[i]
            )));
        }
        let mut ids = self.ids.clone();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(NbodyError::InvalidParticles(format!("duplicate id {}", w[0])));
        }
        Ok(())
    }
}

pub fn wrap_coord(x: f64, l: f64) -> f64 {
    let w = x.rem_euclid(l);
    // rem_euclid can round up to exactly l for tiny negative inputs
    if w >= l {
        0.0
    } else {
        w
    }
}

/// Minimum-image separation `a - b` in a periodic box of side `l`.
#[inline]
pub fn min_image(d: f64, l: f64) -> f64 {
    if d > 0.5 * l {
        d - l
    } else if d < -0.5 * l {
        d + l
    } else {
        d
    }
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm2(a: Vec3) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_maps_into_box() {
        assert_eq!(wrap_coord(-0.25, 1.0), 0.75);
        assert_eq!(wrap_coord(1.25, 1.0), 0.25);
        assert_eq!(wrap_coord(-1e-18, 1.0), 0.0);
        assert_eq!(wrap_coord(1.0, 1.0), 0.0);
    }

    #[test]
    fn min_image_picks_shortest() {
        assert_eq!(min_image(0.75, 1.0), -0.25);
        assert_eq!(min_image(-0.75, 1.0), 0.25);
        assert_eq!(min_image(0.25, 1.0), 0.25);
    }

    #[test]
    fn validate_catches_duplicates_and_bad_mass() {
        let mut p = ParticleSet::new(1.0);
        p.push(1, 1.0, [0.1; 3], [0.0; 3]);
        p.push(1, 1.0, [0.2; 3], [0.0; 3]);
        assert!(p.validate().is_err());
        p.ids[1] = 2;
        p.validate().unwrap();
        p.masses[0] = 0.0;
        assert!(p.validate().is_err());
    }
}
