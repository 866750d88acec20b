use crate::error::{ensure, Error, Result};

/// Uniformly sampled real multichannel time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    fs: f64,
    channels: Vec<Vec<f64>>,
}

impl Signal {
    pub fn new(fs: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        ensure!(
            fs > 0.0 && fs.is_finite(),
            InvalidParameter,
            "sample rate must be positive, got {fs}"
        );
        ensure!(
            !channels.is_empty(),
            InvalidParameter,
            "signal has no channels"
        );
        let len = channels[0].len();
        for (i, ch) in channels.iter().enumerate() {
            if ch.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "channel {i} has {} samples, channel 0 has {len}",
                    ch.len()
                )));
            }
            ensure!(
                ch.iter().all(|v| v.is_finite()),
                InvalidParameter,
                "channel {i} contains non-finite samples"
            );
        }
        Ok(Signal { fs, channels })
    }

    pub fn mono(fs: f64, samples: Vec<f64>) -> Result<Self> {
        Signal::new(fs, vec![samples])
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Single-channel view of channel `i`.
    pub fn extract(&self, i: usize) -> Signal {
        Signal {
            fs: self.fs,
            channels: vec![self.channels[i].clone()],
        }
    }

    /// Sample vector at time index `n`.
    pub fn frame(&self, n: usize) -> Vec<f64> {
        self.channels.iter().map(|c| c[n]).collect()
    }

    pub fn energy(&self, i: usize) -> f64 {
        self.channels[i].iter().map(|v| v * v).sum()
    }

    pub(crate) fn check_same_shape(&self, other: &Signal, what: &str) -> Result<()> {
        if self.n_channels() != other.n_channels() || self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.n_channels(),
                self.len(),
                other.n_channels(),
                other.len()
            )));
        }
        Ok(())
    }
}
