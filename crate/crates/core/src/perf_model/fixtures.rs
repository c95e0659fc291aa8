//! Measured machine and network constants, and the model columns of the
//! published run tables, for regression and reproduction checks.

use std::collections::BTreeMap;

use super::{MachineConstants, NetworkConstants, RunSpec};

fn site(name: &str, tau_tree: f64, tau_fft: f64, tau_mesh: f64) -> MachineConstants {
    MachineConstants {
        name: name.to_string(),
        tau_tree,
        tau_fft,
        tau_mesh,
    }
}

/// The five Dutch grid clusters in their fixed run order.
pub fn das3_sites() -> Vec<MachineConstants> {
    vec![
        site("VU", 5.9e-9, 5.0e-9, 2.4e-6),
        site("UvA", 6.4e-9, 5.0e-9, 2.4e-6),
        site("LIACS", 5.4e-9, 5.7e-9, 2.4e-6),
        site("TU", 5.9e-9, 5.0e-9, 1.9e-6),
        site("MM", 5.9e-9, 5.0e-9, 2.4e-6),
    ]
}

pub fn das3_network() -> NetworkConstants {
    NetworkConstants {
        lambda_lan: 1.0e-4,
        lambda_wan: 3.0e-3,
        sigma_lan: 1.0e8,
        sigma_wan: 5.0e7,
        star_topology: true,
    }
}

/// Supercomputers keyed by their run-label letter: (H) Espoo, (E)dinburgh,
/// (A)msterdam, (T)okyo.
pub fn gbbp_sites() -> BTreeMap<&'static str, MachineConstants> {
    BTreeMap::from([
        ("A", site("Huygens", 5.4e-9, 5.1e-9, 5.8e-7)),
        ("H", site("Louhi", 3.9e-9, 3.4e-9, 7.8e-7)),
        ("E", site("HECToR", 4.0e-9, 3.4e-9, 7.8e-7)),
        ("T", site("CFCA", 4.3e-9, 3.4e-9, 7.8e-7)),
    ])
}

pub fn gbbp_network() -> NetworkConstants {
    NetworkConstants {
        lambda_lan: 8.0e-5,
        lambda_wan: 2.7e-1,
        sigma_lan: 5.4e8,
        sigma_wan: 5.0e7,
        star_topology: false,
    }
}

/// Homogeneous constants used for the scalability predictions.
pub fn global_grid_site() -> MachineConstants {
    site("grid", 5.0e-9, 3.5e-9, 7.5e-7)
}

pub fn global_grid_network() -> NetworkConstants {
    NetworkConstants {
        lambda_lan: 8.0e-5,
        lambda_wan: 3.0e-1,
        sigma_lan: 2.3e9,
        sigma_wan: 4.0e8,
        star_topology: false,
    }
}

/// One-site global-grid spec with `p` processes, theta 0.5, r_samp 1/10000.
pub fn global_grid_spec(n: f64, m: f64, p: u64) -> RunSpec {
    RunSpec {
        n_particles: n,
        n_mesh: m,
        theta: 0.5,
        p_total: p,
        sites: vec![global_grid_site()],
        network: global_grid_network(),
        r_samp: 1e-4,
        migration_bytes: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Infrastructure {
    Das3,
    Gbbp,
}

/// Model columns of one tabulated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub table: &'static str,
    pub infra: Infrastructure,
    pub n_root: u64,
    pub m_root: u64,
    pub p: u64,
    /// DAS-3: site count as a digit; GBBP: site letters.
    pub label: &'static str,
    pub theta: f64,
    pub comm_local: f64,
    pub comm_total: f64,
    pub t_tree: f64,
    pub t_exec: f64,
    /// Run used an older code version and different settings.
    pub legacy: bool,
}

impl TableRow {
    pub fn site_count(&self) -> usize {
        match self.infra {
            Infrastructure::Das3 => self.label.parse().expect("DAS-3 label is a digit"),
            Infrastructure::Gbbp => self.label.len(),
        }
    }

    pub fn r_samp(&self) -> f64 {
        if self.n_root <= 256 {
            1.0 / 2500.0
        } else {
            1.0 / 10000.0
        }
    }

    /// Site roster. GBBP rosters put Amsterdam first when present, since the
    /// serial mesh solve ran there.
    pub fn roster(&self) -> Vec<MachineConstants> {
        match self.infra {
            Infrastructure::Das3 => das3_sites()[..self.site_count()].to_vec(),
            Infrastructure::Gbbp => {
                let sites = gbbp_sites();
                let mut letters: Vec<char> = self.label.chars().collect();
                letters.sort_by_key(|&c| (c != 'A', c));
                letters
                    .into_iter()
                    .map(|c| sites[c.to_string().as_str()].clone())
                    .collect()
            }
        }
    }

    pub fn spec(&self) -> RunSpec {
        RunSpec {
            n_particles: (self.n_root as f64).powi(3),
            n_mesh: (self.m_root as f64).powi(3),
            theta: self.theta,
            p_total: self.p,
            sites: self.roster(),
            network: match self.infra {
                Infrastructure::Das3 => das3_network(),
                Infrastructure::Gbbp => gbbp_network(),
            },
            r_samp: self.r_samp(),
            migration_bytes: 0.0,
        }
    }
}

macro_rules! rows {
    ($table:literal, $infra:ident, $theta:literal;
     $( $n:literal $m:literal $p:literal $label:literal $cl:literal $ct:literal $tt:literal $te:literal $($legacy:ident)?; )*) => {
        &[ $( TableRow {
            table: $table,
            infra: Infrastructure::$infra,
            n_root: $n, m_root: $m, p: $p, label: $label, theta: $theta,
            comm_local: $cl, comm_total: $ct, t_tree: $tt, t_exec: $te,
            legacy: rows!(@legacy $($legacy)?),
        }, )* ]
    };
    (@legacy) => { false };
    (@legacy legacy) => { true };
}

/// Dutch grid runs at theta 0.3.
pub const DAS3_THETA_03: &[TableRow] = rows!("das3-0.3", Das3, 0.3;
    256 128 60 "1" 0.13 0.13 11.79 12.81;
    256 128 60 "2" 0.12 0.73 12.29 13.91;
    256 128 60 "3" 0.12 1.63 11.79 14.35;
    256 128 60 "4" 0.11 2.85 11.79 15.53;
    256 128 60 "5" 0.11 4.40 11.79 17.09;
    512 128 120 "1" 0.18 0.18 64.44 67.52;
    512 128 120 "2" 0.16 2.84 67.17 72.92;
    512 128 120 "3" 0.16 5.82 64.44 73.19;
    512 128 120 "4" 0.15 9.11 64.44 76.35;
    512 128 120 "5" 0.15 12.73 64.44 79.99;
    512 256 120 "1" 0.74 0.74 54.19 59.62;
    512 256 120 "2" 0.72 5.64 56.48 66.83;
    512 256 120 "3" 0.72 13.10 54.19 72.26;
    512 256 120 "4" 0.71 23.11 54.19 82.14;
    512 256 120 "5" 0.71 35.69 54.19 94.74;
);

/// Dutch grid runs at theta 0.5.
pub const DAS3_THETA_05: &[TableRow] = rows!("das3-0.5", Das3, 0.5;
    256 128 60 "1" 0.12 0.12 5.92 6.93;
    256 128 60 "2" 0.11 0.64 6.17 7.70;
    256 128 60 "3" 0.11 1.46 5.92 8.30;
    256 128 60 "4" 0.11 2.61 5.92 9.41;
    256 128 60 "5" 0.10 4.07 5.92 10.88;
    512 128 120 "1" 0.16 0.16 32.33 35.40;
    512 128 120 "2" 0.14 2.50 33.70 39.11;
    512 128 120 "3" 0.14 5.16 32.33 40.43;
    512 128 120 "4" 0.13 8.13 32.33 43.26;
    512 128 120 "5" 0.13 11.43 32.33 46.58;
    512 256 120 "1" 0.72 0.72 27.19 32.60;
    512 256 120 "2" 0.70 5.30 28.34 38.34;
    512 256 120 "3" 0.70 12.44 27.19 44.61;
    512 256 120 "4" 0.69 22.13 27.19 54.16;
    512 256 120 "5" 0.69 34.39 27.19 66.44;
);

/// Supercomputer runs at theta 0.3. Rows relayed over the direct
/// Edinburgh-Espoo path carry the same model values as the relayed ones.
pub const GBBP_THETA_03: &[TableRow] = rows!("gbbp-0.3", Gbbp, 0.3;
    256 128 60 "A" 0.04 0.03 10.79 11.22;
    256 128 60 "HA" 0.03 1.06 9.29 10.74;
    256 128 60 "EA" 0.03 1.06 9.39 10.84;
    256 128 60 "AT" 0.03 4.23 9.69 14.31;
    256 128 60 "HEA" 0.03 1.66 8.86 10.91;
    512 128 120 "A" 0.06 0.06 58.98 59.91;
    512 128 120 "HA" 0.04 3.14 50.79 54.91;
    512 128 120 "HEA" 0.04 4.19 48.42 53.64;
    512 128 120 "HEA" 0.04 4.19 48.42 53.64;
    512 128 120 "HEAT" 0.04 9.42 48.06 58.52;
    512 256 120 "A" 0.16 0.16 49.60 52.46;
    512 256 120 "HA" 0.15 5.48 42.71 51.01;
    512 256 120 "EA" 0.15 5.48 43.17 51.47;
    512 256 120 "AT" 0.15 8.66 44.54 56.02;
    512 256 120 "HEA" 0.14 7.66 40.72 51.22;
    1024 256 240 "E" 0.20 0.20 200.7 205.8;
    1024 256 240 "A" 0.20 0.20 271.0 275.8;
    1024 256 240 "HA" 0.18 23.88 233.4 262.3;
    1024 256 240 "HEA" 0.17 26.05 217.1 248.4;
);

/// Supercomputer runs at theta 0.5.
pub const GBBP_THETA_05: &[TableRow] = rows!("gbbp-0.5", Gbbp, 0.5;
    256 128 60 "A" 0.04 0.04 5.42 5.84;
    256 128 60 "HA" 0.03 0.98 4.66 6.03;
    256 128 60 "EA" 0.03 0.98 4.71 6.08;
    256 128 60 "AT" 0.03 4.15 4.86 9.40;
    256 128 60 "HEA" 0.03 1.58 4.45 6.41;
    512 128 120 "A" 0.05 0.05 29.59 30.52;
    512 128 120 "HA" 0.04 2.82 25.48 29.29;
    512 128 120 "HEA" 0.04 3.87 24.30 29.19;
    512 128 120 "HEA" 0.04 3.87 24.30 29.19;
    512 128 120 "HEAT" 0.03 9.09 24.11 34.25;
    512 256 120 "A" 0.16 0.16 24.89 27.74;
    512 256 120 "HA" 0.14 5.16 21.43 29.40;
    512 256 120 "EA" 0.14 5.16 21.66 29.63;
    512 256 120 "AT" 0.14 8.33 22.35 33.50;
    512 256 120 "HEA" 0.14 7.33 20.43 30.61;
    1024 256 240 "HA" 0.17 22.59 117.1 144.8;
    2048 256 750 "AT" 0.26 17.59 443.2 470.3 legacy;
);

/// Every tabulated row, in table order.
pub fn all_rows() -> impl Iterator<Item = &'static TableRow> {
    DAS3_THETA_03
        .iter()
        .chain(DAS3_THETA_05)
        .chain(GBBP_THETA_03)
        .chain(GBBP_THETA_05)
}
