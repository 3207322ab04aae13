//! Run configuration: defaults, flat `key = value` files and flag overrides.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use nestclust::archive::ModelKind;
use nestclust::basis::SplineBasis;
use nestclust::model::{GammaPrior, Hyperparams, NestedDataset};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub k: usize,
    pub l: usize,
    pub sweeps: usize,
    pub burnin: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Knot range; the data's covariate range when unset.
    pub spline_lo: Option<f64>,
    pub spline_hi: Option<f64>,
    pub spline_p: usize,
    pub spline_q: u32,
    pub nu1: f64,
    pub nu2: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Inverse-Wishart degrees of freedom; basis dimension + 2 when unset.
    pub nu_omega: Option<f64>,
    pub nu_sigma: Option<f64>,
    pub a: GammaPrior,
    pub b: GammaPrior,
    pub a1: GammaPrior,
    pub b1: GammaPrior,
    pub a2: GammaPrior,
    pub b2: GammaPrior,
    pub rho: f64,
    pub psi: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyperparams::with_scale(DMatrix::identity(1, 1));
        Self {
            model: ModelKind::Nested,
            k: 40,
            l: 30,
            sweeps: 3000,
            burnin: 1000,
            thin: 1,
            chains: 2,
            seed: 1,
            spline_lo: None,
            spline_hi: None,
            spline_p: 13,
            spline_q: 1,
            nu1: h.nu1,
            nu2: h.nu2,
            eta1: h.eta1,
            eta2: h.eta2,
            nu_omega: None,
            nu_sigma: None,
            a: h.a,
            b: h.b,
            a1: h.a1,
            b1: h.b1,
            a2: h.a2,
            b2: h.b2,
            rho: h.rho,
            psi: h.psi,
            out: None,
        }
    }
}

/// Every accepted key, in canonical order (`out` is last and never hashed).
pub const KEYS: &[&str] = &[
    "model", "K", "L", "sweeps", "burnin", "thin", "chains", "seed", "spline_lo", "spline_hi", "spline_p", "spline_q",
    "nu1", "nu2", "eta1", "eta2", "nu_omega", "nu_sigma", "a_shape", "a_rate", "b_shape", "b_rate", "a1_shape",
    "a1_rate", "b1_shape", "b1_rate", "a2_shape", "a2_rate", "b2_shape", "b2_rate", "rho", "psi", "out",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.trim().parse().map_err(|_| CliError::usage(format!("invalid value {value:?} for {key}")))
}

fn parse_opt(key: &str, value: &str) -> CliResult<Option<f64>> {
    if value.trim() == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn opt_str(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key {
            "model" => self.model = v.parse().map_err(CliError::from_core_settings)?,
            "K" => self.k = parse(key, v)?,
            "L" => self.l = parse(key, v)?,
            "sweeps" => self.sweeps = parse(key, v)?,
            "burnin" => self.burnin = parse(key, v)?,
            "thin" => self.thin = parse(key, v)?,
            "chains" => self.chains = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "spline_lo" => self.spline_lo = parse_opt(key, v)?,
            "spline_hi" => self.spline_hi = parse_opt(key, v)?,
            "spline_p" => self.spline_p = parse(key, v)?,
            "spline_q" => self.spline_q = parse(key, v)?,
            "nu1" => self.nu1 = parse(key, v)?,
            "nu2" => self.nu2 = parse(key, v)?,
            "eta1" => self.eta1 = parse(key, v)?,
            "eta2" => self.eta2 = parse(key, v)?,
            "nu_omega" => self.nu_omega = parse_opt(key, v)?,
            "nu_sigma" => self.nu_sigma = parse_opt(key, v)?,
            "a_shape" => self.a.shape = parse(key, v)?,
            "a_rate" => self.a.rate = parse(key, v)?,
            "b_shape" => self.b.shape = parse(key, v)?,
            "b_rate" => self.b.rate = parse(key, v)?,
            "a1_shape" => self.a1.shape = parse(key, v)?,
            "a1_rate" => self.a1.rate = parse(key, v)?,
            "b1_shape" => self.b1.shape = parse(key, v)?,
            "b1_rate" => self.b1.rate = parse(key, v)?,
            "a2_shape" => self.a2.shape = parse(key, v)?,
            "a2_rate" => self.a2.rate = parse(key, v)?,
            "b2_shape" => self.b2.shape = parse(key, v)?,
            "b2_rate" => self.b2.rate = parse(key, v)?,
            "rho" => self.rho = parse(key, v)?,
            "psi" => self.psi = parse(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            other => return Err(CliError::usage(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file. Blank lines and lines starting with `#`
    /// are ignored; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{origin}:{}: expected key = value", n + 1)))?;
            self.set(key.trim(), value).map_err(|e| match e {
                CliError::Usage(m) => CliError::usage(format!("{origin}:{}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `(key, value)` pairs in canonical order, excluding the output path.
    pub fn canonical(&self) -> Vec<(&'static str, String)> {
        let g = |p: &GammaPrior| (p.shape.to_string(), p.rate.to_string());
        let (a_s, a_r) = g(&self.a);
        let (b_s, b_r) = g(&self.b);
        let (a1_s, a1_r) = g(&self.a1);
        let (b1_s, b1_r) = g(&self.b1);
        let (a2_s, a2_r) = g(&self.a2);
        let (b2_s, b2_r) = g(&self.b2);
        let values = vec![
            self.model.as_str().to_string(),
            self.k.to_string(),
            self.l.to_string(),
            self.sweeps.to_string(),
            self.burnin.to_string(),
            self.thin.to_string(),
            self.chains.to_string(),
            self.seed.to_string(),
            opt_str(self.spline_lo),
            opt_str(self.spline_hi),
            self.spline_p.to_string(),
            self.spline_q.to_string(),
            self.nu1.to_string(),
            self.nu2.to_string(),
            self.eta1.to_string(),
            self.eta2.to_string(),
            opt_str(self.nu_omega),
            opt_str(self.nu_sigma),
            a_s,
            a_r,
            b_s,
            b_r,
            a1_s,
            a1_r,
            b1_s,
            b1_r,
            a2_s,
            a2_r,
            b2_s,
            b2_r,
            self.rho.to_string(),
            self.psi.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// The canonical configuration as `key = value` lines.
    pub fn to_text(&self) -> String {
        self.canonical().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.k == 0 || self.l == 0 {
            return Err(CliError::usage("truncation levels K and L must be at least 1"));
        }
        if self.sweeps <= self.burnin {
            return Err(CliError::usage("sweeps must exceed burnin"));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(CliError::usage("thin and chains must be at least 1"));
        }
        if self.spline_p == 0 {
            return Err(CliError::usage("spline_p must be at least 1"));
        }
        if let (Some(lo), Some(hi)) = (self.spline_lo, self.spline_hi) {
            if !(lo < hi) && self.spline_p > 1 {
                return Err(CliError::usage("spline_lo must be below spline_hi"));
            }
        }
        Ok(())
    }

    /// Spline basis over the configured range, or the data range.
    pub fn basis(&self, data: &NestedDataset) -> CliResult<SplineBasis> {
        let (dlo, dhi) = data.x_range();
        let lo = self.spline_lo.unwrap_or(dlo);
        let hi = self.spline_hi.unwrap_or(dhi);
        SplineBasis::equally_spaced(lo, hi, self.spline_p, self.spline_q).map_err(CliError::from_core_settings)
    }

    /// Hyperparameters with unit-information inverse-Wishart scales.
    pub fn hyperparams(&self, data: &NestedDataset, basis: &SplineBasis) -> CliResult<Hyperparams> {
        let mut h = Hyperparams::unit_information(data, basis).map_err(CliError::from_core)?;
        h.nu1 = self.nu1;
        h.nu2 = self.nu2;
        h.eta1 = self.eta1;
        h.eta2 = self.eta2;
        if let Some(v) = self.nu_omega {
            h.nu_omega = v;
        }
        if let Some(v) = self.nu_sigma {
            h.nu_sigma = v;
        }
        h.a = self.a;
        h.b = self.b;
        h.a1 = self.a1;
        h.b1 = self.b1;
        h.a2 = self.a2;
        h.b2 = self.b2;
        h.rho = self.rho;
        h.psi = self.psi;
        h.validate().map_err(CliError::from_core_settings)?;
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_settings() {
        let c = RunConfig::default();
        assert_eq!((c.k, c.l, c.spline_p, c.spline_q), (40, 30, 13, 1));
        for g in [c.a, c.b, c.a1, c.b1, c.a2, c.b2] {
            assert_eq!((g.shape, g.rate), (3.0, 3.0));
        }
        assert_eq!((c.nu1, c.nu2, c.eta1, c.eta2), (2.0, 0.04, 2.0, 4.0));
        c.validate().unwrap();
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("K", "7").unwrap();
        c.set("spline_lo", "-3.5").unwrap();
        c.set("a2_rate", "0.125").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text(), "text").unwrap();
        assert_eq!(c, d);
        assert_eq!(c.hash(), d.hash());
        assert_ne!(c.hash(), RunConfig::default().hash());
        assert_eq!(c.canonical().len(), KEYS.len() - 1);
    }

    #[test]
    fn output_path_is_not_hashed() {
        let mut c = RunConfig::default();
        c.set("out", "/tmp/somewhere").unwrap();
        assert_eq!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let mut c = RunConfig::default();
        let e = c.apply_text("# comment\n\nsweeps = 10\nswepes = 3\n", "cfg").unwrap_err();
        assert_eq!(e, CliError::usage("cfg:4: unknown configuration key \"swepes\""));
        assert_eq!(c.sweeps, 10);
        assert_eq!(c.apply_text("K = many", "cfg").unwrap_err().exit_code(), 1);
        assert_eq!(c.apply_text("no equals sign", "cfg").unwrap_err().exit_code(), 1);
        assert_eq!(c.apply_text("model = tree", "cfg").unwrap_err().exit_code(), 1);
    }

    #[test]
    fn validation_rejects_inconsistent_runs() {
        let mut c = RunConfig::default();
        c.burnin = c.sweeps;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.chains = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.k = 0;
        assert!(c.validate().is_err());
    }
}
