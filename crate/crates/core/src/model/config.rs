use serde::{Deserialize, Serialize};

use super::ModelError;

/// One mobile inverted bottleneck block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MbConvSpec {
    pub expansion_ratio: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub se_reduction: usize,
    pub has_residual: bool,
}

impl MbConvSpec {
    /// Builds a spec with the residual flag derived from stride and widths.
    pub fn new(
        expansion_ratio: usize,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        se_reduction: usize,
    ) -> Self {
        Self {
            expansion_ratio,
            in_channels,
            out_channels,
            kernel_size,
            stride,
            se_reduction,
            has_residual: stride == 1 && in_channels == out_channels,
        }
    }

    pub fn expanded_channels(&self) -> usize {
        self.in_channels * self.expansion_ratio
    }

    pub fn squeezed_channels(&self) -> usize {
        self.expanded_channels() / self.se_reduction
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.expansion_ratio == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad(format!("MBConv widths must be positive: {self:?}"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("MBConv kernel size must be odd, got {}", self.kernel_size));
        }
        if self.stride != 1 && self.stride != 2 {
            return bad(format!("MBConv stride must be 1 or 2, got {}", self.stride));
        }
        if self.has_residual && !(self.stride == 1 && self.in_channels == self.out_channels) {
            return bad("residual requires stride 1 and equal in/out channels".into());
        }
        if self.se_reduction == 0 || !self.expanded_channels().is_multiple_of(self.se_reduction) {
            return bad(format!(
                "SE reduction {} does not divide expanded channels {}",
                self.se_reduction,
                self.expanded_channels()
            ));
        }
        Ok(())
    }
}

pub const STAGE_COUNT: usize = 7;

/// Architecture hyper-parameters. Construct through [`ModelConfig::validate`]
/// before use; every spatial contract is checked there rather than at runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_grid: usize,
    pub stem_channels: usize,
    pub stage_specs: Vec<MbConvSpec>,
    pub hidden_channels: usize,
    pub lstm_kernel: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

const B0_KERNELS: [usize; STAGE_COUNT] = [3, 3, 5, 3, 5, 5, 3];
const B0_EXPANSIONS: [usize; STAGE_COUNT] = [1, 6, 6, 6, 6, 6, 6];
const B0_STRIDES: [usize; STAGE_COUNT] = [1, 2, 2, 2, 1, 2, 1];

fn chain(stem: usize, widths: &[usize], expansions: &[usize], kernels: &[usize], strides: &[usize], se: usize) -> Vec<MbConvSpec> {
    let mut specs = Vec::with_capacity(widths.len());
    let mut c_in = stem;
    for i in 0..widths.len() {
        specs.push(MbConvSpec::new(expansions[i], c_in, widths[i], kernels[i], strides[i], se));
        c_in = widths[i];
    }
    specs
}

impl Default for ModelConfig {
    /// B0 stage table at quarter width, 64x64 input.
    fn default() -> Self {
        Self {
            input_grid: 64,
            stem_channels: 8,
            stage_specs: chain(8, &[4, 6, 10, 20, 28, 48, 80], &B0_EXPANSIONS, &B0_KERNELS, &B0_STRIDES, 4),
            hidden_channels: 32,
            lstm_kernel: 3,
            num_classes: 12,
            dropout_rate: 0.2,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration used for training on the synthetic corpus:
    /// the same seven kernel sizes, narrow widths, expansion 2, and only
    /// three stride-2 reductions so that a 32x32 raster ends at 4x4.
    pub fn desk() -> Self {
        Self {
            input_grid: 32,
            stem_channels: 6,
            stage_specs: chain(
                6,
                &[6, 8, 8, 10, 10, 12, 12],
                &[1, 2, 2, 2, 2, 2, 2],
                &B0_KERNELS,
                &[1, 2, 2, 1, 1, 1, 1],
                2,
            ),
            hidden_channels: 8,
            lstm_kernel: 3,
            num_classes: 12,
            dropout_rate: 0.2,
        }
    }

    /// Tiny configuration for exhaustive finite-difference checks: 16x16
    /// input, two stride-2 stages after the stem, 2x2 feature maps.
    pub fn gradient_check() -> Self {
        Self {
            input_grid: 16,
            stem_channels: 2,
            stage_specs: chain(
                2,
                &[2, 3, 3, 3, 2, 2, 2],
                &[1, 2, 2, 1, 2, 1, 2],
                &B0_KERNELS,
                &[1, 2, 1, 1, 1, 2, 1],
                1,
            ),
            hidden_channels: 2,
            lstm_kernel: 3,
            num_classes: 3,
            dropout_rate: 0.2,
        }
    }

    pub fn total_stride(&self) -> usize {
        2 * self.stage_specs.iter().map(|s| s.stride).product::<usize>()
    }

    /// Side of the backbone's output feature map.
    pub fn feature_grid(&self) -> usize {
        self.input_grid / self.total_stride()
    }

    pub fn feature_channels(&self) -> usize {
        self.stage_specs.last().map_or(self.stem_channels, |s| s.out_channels)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.stage_specs.len() != STAGE_COUNT {
            return bad(format!(
                "expected exactly {STAGE_COUNT} MBConv stages, got {}",
                self.stage_specs.len()
            ));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.input_grid == 0 || self.stem_channels == 0 || self.hidden_channels == 0 {
            return bad("grid, stem and hidden widths must be positive".into());
        }
        if self.lstm_kernel.is_multiple_of(2) {
            return bad(format!("ConvLSTM kernel must be odd, got {}", self.lstm_kernel));
        }
        let mut c_in = self.stem_channels;
        for (i, spec) in self.stage_specs.iter().enumerate() {
            spec.validate()
                .map_err(|e| ModelError::Config(format!("stage {}: {e}", i + 1)))?;
            if spec.in_channels != c_in {
                return bad(format!(
                    "stage {} expects {} input channels but receives {c_in}",
                    i + 1,
                    spec.in_channels
                ));
            }
            c_in = spec.out_channels;
        }
        let total = self.total_stride();
        if !self.input_grid.is_multiple_of(total) {
            return bad(format!(
                "input grid {} is not divisible by the total stride {total}",
                self.input_grid
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_ends_at_2x2() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        // stem /2 then four stride-2 stages: 64 / 2^5
        assert_eq!(c.total_stride(), 32);
        assert_eq!(c.feature_grid(), 2);
        assert_eq!(c.feature_channels(), 80);
    }

    #[test]
    fn reduced_configs_are_valid() {
        let d = ModelConfig::desk();
        d.validate().unwrap();
        assert_eq!(d.feature_grid(), 4);
        let g = ModelConfig::gradient_check();
        g.validate().unwrap();
        assert_eq!(g.feature_grid(), 2);
    }

    #[test]
    fn rejects_wrong_stage_count_and_indivisible_grid() {
        let mut c = ModelConfig::default();
        c.stage_specs.pop();
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));

        let c = ModelConfig { input_grid: 48, ..ModelConfig::default() };
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("total stride"), "{err}");
    }

    #[test]
    fn residual_invariant() {
        let mut s = MbConvSpec::new(2, 4, 4, 3, 1, 2);
        assert!(s.has_residual);
        s.stride = 2;
        assert!(s.validate().is_err());
        assert!(!MbConvSpec::new(2, 4, 4, 3, 2, 2).has_residual);
    }

    #[test]
    fn se_reduction_must_divide() {
        assert!(MbConvSpec::new(6, 4, 6, 3, 2, 5).validate().is_err());
        assert!(MbConvSpec::new(6, 4, 6, 3, 2, 4).validate().is_ok());
    }
}
