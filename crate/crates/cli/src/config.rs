//! Build configurations: a JSON file, command-line flags, or both (flags win).

use std::path::Path;

use orthokernel::{AocConfig, ConvSpec, Ordering, OrthoSettings, Scheme};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// Fully specified build request; this is what the sidecar records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub groups: usize,
    pub dilation: usize,
    pub scheme: Scheme,
    pub iters: usize,
    pub beta: f64,
    pub seed: u64,
    pub ordering: Ordering,
    pub eps: f64,
    pub direct_stride: bool,
}

/// A build request with every field optional, as read from a config file or
/// collected from flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub c_in: Option<usize>,
    pub c_out: Option<usize>,
    pub kernel: Option<[usize; 2]>,
    pub stride: Option<usize>,
    pub groups: Option<usize>,
    pub dilation: Option<usize>,
    pub scheme: Option<Scheme>,
    pub iters: Option<usize>,
    pub beta: Option<f64>,
    pub seed: Option<u64>,
    pub ordering: Option<Ordering>,
    pub eps: Option<f64>,
    pub direct_stride: Option<bool>,
}

impl PartialConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::bad_input(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::bad_input(format!("invalid config {}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            c_in: over.c_in.or(self.c_in),
            c_out: over.c_out.or(self.c_out),
            kernel: over.kernel.or(self.kernel),
            stride: over.stride.or(self.stride),
            groups: over.groups.or(self.groups),
            dilation: over.dilation.or(self.dilation),
            scheme: over.scheme.or(self.scheme),
            iters: over.iters.or(self.iters),
            beta: over.beta.or(self.beta),
            seed: over.seed.or(self.seed),
            ordering: over.ordering.or(self.ordering),
            eps: over.eps.or(self.eps),
            direct_stride: over.direct_stride.or(self.direct_stride),
        }
    }

    /// Fill defaults; channels and kernel size are required.
    pub fn finish(self) -> CliResult<BuildConfig> {
        let missing = |name: &str| CliError::bad_input(format!("missing required field {name:?}"));
        let defaults = AocConfig::new(ConvSpec::new(1, 1, 1), 0);
        Ok(BuildConfig {
            c_in: self.c_in.ok_or_else(|| missing("c_in"))?,
            c_out: self.c_out.ok_or_else(|| missing("c_out"))?,
            kernel: self.kernel.ok_or_else(|| missing("kernel"))?,
            stride: self.stride.unwrap_or(1),
            groups: self.groups.unwrap_or(1),
            dilation: self.dilation.unwrap_or(1),
            scheme: self.scheme.unwrap_or(defaults.settings.scheme),
            iters: self.iters.unwrap_or(defaults.settings.iters),
            beta: self.beta.unwrap_or(defaults.settings.beta),
            seed: self.seed.unwrap_or(0),
            ordering: self.ordering.unwrap_or_default(),
            eps: self.eps.unwrap_or(defaults.settings.eps),
            direct_stride: self.direct_stride.unwrap_or(true),
        })
    }
}

impl BuildConfig {
    pub fn spec(&self) -> ConvSpec {
        ConvSpec::new(self.c_in, self.c_out, self.kernel[0])
            .with_kernel_size(self.kernel[0], self.kernel[1])
            .with_stride(self.stride)
            .with_groups(self.groups)
            .with_dilation(self.dilation)
    }

    pub fn settings(&self) -> OrthoSettings {
        OrthoSettings {
            scheme: self.scheme,
            iters: self.iters,
            beta: self.beta,
            eps: self.eps,
        }
    }

    pub fn aoc(&self) -> AocConfig {
        AocConfig::new(self.spec(), self.seed)
            .with_settings(self.settings())
            .with_ordering(self.ordering)
            .with_direct_stride(self.direct_stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overlay() {
        let file: PartialConfig =
            serde_json::from_str(r#"{"c_in":4,"c_out":8,"kernel":[3,3],"stride":2,"seed":5}"#)
                .unwrap();
        let flags = PartialConfig {
            seed: Some(9),
            scheme: Some(Scheme::Cayley),
            ..Default::default()
        };
        let cfg = file.overlay(flags).finish().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.stride, 2);
        assert_eq!(cfg.scheme, Scheme::Cayley);
        assert_eq!((cfg.groups, cfg.dilation, cfg.beta), (1, 1, 0.5));
        assert_eq!(cfg.iters, orthokernel::construct::CONSTRUCT_ITERS);
    }

    #[test]
    fn rejects_unknown_and_missing_fields() {
        assert!(serde_json::from_str::<PartialConfig>(r#"{"c_in":4,"channels":8}"#).is_err());
        let partial: PartialConfig = serde_json::from_str(r#"{"c_in":4,"kernel":[3,3]}"#).unwrap();
        assert!(partial.finish().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg: PartialConfig = serde_json::from_str(
            r#"{"c_in":4,"c_out":8,"kernel":[3,2],"stride":2,"groups":2,"dilation":1,
                "scheme":"qr_mgs","iters":12,"beta":0.5,"seed":1,"ordering":"scfac"}"#,
        )
        .unwrap();
        let full = cfg.finish().unwrap();
        let back: BuildConfig =
            serde_json::from_str(&serde_json::to_string(&full).unwrap()).unwrap();
        assert_eq!(back, full);
        assert_eq!(full.spec().k_w, 2);
        assert_eq!(full.aoc().ordering, Ordering::Scfac);
    }
}
