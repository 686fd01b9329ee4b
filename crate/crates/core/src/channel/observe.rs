use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

use super::{ChannelError, ChannelTensor};
use crate::scenario::SpectralGrid;

/// Transmit precoders, per-subcarrier powers and the receive combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDesign {
    /// One vector for all `(i, k)`, one per subcarrier, or one per `(i, k)`
    /// in subcarrier-major order.
    pub precoders: Vec<DVector<Complex64>>,
    /// Power per subcarrier position [W].
    pub powers: Vec<f64>,
    /// Combiner columns; the identity keeps every receive element.
    pub combiner: DMatrix<Complex64>,
}

impl SignalDesign {
    /// Uniform power `total / N`, identity combiner.
    pub fn uniform(precoders: Vec<DVector<Complex64>>, grid: &SpectralGrid, rx_elements: usize, total_power: f64) -> Self {
        Self {
            precoders,
            powers: vec![total_power / grid.n_subcarriers as f64; grid.n_subcarriers],
            combiner: DMatrix::identity(rx_elements, rx_elements),
        }
    }

    /// Unit-norm precoders with i.i.d. uniform phases for every `(i, k)`.
    pub fn random_beams(tx_elements: usize, rx_elements: usize, grid: &SpectralGrid, total_power: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (tx_elements as f64).sqrt();
        let precoders = (0..grid.n_subcarriers * grid.n_symbols)
            .map(|_| DVector::from_fn(tx_elements, |_, _| Complex64::from_polar(scale, rng.random_range(0.0..2.0 * PI))))
            .collect();
        Self::uniform(precoders, grid, rx_elements, total_power)
    }

    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn precoder(&self, grid: &SpectralGrid, i: usize, k: usize) -> &DVector<Complex64> {
        match self.precoders.len() {
            1 => &self.precoders[0],
            n if n == grid.n_subcarriers => &self.precoders[i],
            _ => &self.precoders[i * grid.n_symbols + k],
        }
    }

    pub fn validate(&self, grid: &SpectralGrid, rx_elements: usize, tx_elements: usize) -> Result<(), ChannelError> {
        let count = self.precoders.len();
        if ![1, grid.n_subcarriers, grid.n_subcarriers * grid.n_symbols].contains(&count) {
            return Err(ChannelError::Dimension(format!("{count} precoders for a {}x{} grid", grid.n_subcarriers, grid.n_symbols)));
        }
        if let Some(f) = self.precoders.iter().find(|f| f.len() != tx_elements) {
            return Err(ChannelError::Dimension(format!("precoder length {} with {tx_elements} tx elements", f.len())));
        }
        if self.powers.len() != grid.n_subcarriers {
            return Err(ChannelError::Dimension(format!("{} powers for {} subcarriers", self.powers.len(), grid.n_subcarriers)));
        }
        if self.powers.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ChannelError::Configuration("powers must be finite and non-negative".into()));
        }
        if self.combiner.nrows() != rx_elements || self.combiner.ncols() == 0 {
            return Err(ChannelError::Dimension(format!(
                "combiner is {}x{} with {rx_elements} rx elements",
                self.combiner.nrows(),
                self.combiner.ncols()
            )));
        }
        Ok(())
    }
}

/// Received samples `y_{n,k}` (one entry per combiner column).
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub grid: SpectralGrid,
    /// Per-sample complex noise variance `noise_psd * df`.
    pub noise_variance: f64,
    data: Vec<DVector<Complex64>>,
}

impl Observations {
    pub fn new(grid: SpectralGrid, noise_variance: f64, data: Vec<DVector<Complex64>>) -> Result<Self, ChannelError> {
        if data.len() != grid.n_subcarriers * grid.n_symbols {
            return Err(ChannelError::Dimension(format!("{} samples for a {}x{} grid", data.len(), grid.n_subcarriers, grid.n_symbols)));
        }
        Ok(Self { grid, noise_variance, data })
    }

    pub fn get(&self, i: usize, k: usize) -> &DVector<Complex64> {
        &self.data[i * self.grid.n_symbols + k]
    }

    pub fn outputs(&self) -> usize {
        self.data.first().map_or(0, |v| v.len())
    }

    pub fn samples(&self) -> &[DVector<Complex64>] {
        &self.data
    }
}

/// `y_{n,k} = sqrt(p_n) W^H H_{n,k} f_{n,k} + noise` with circular Gaussian
/// noise of variance `noise_psd * df` per output sample.
pub fn observe(h: &ChannelTensor, design: &SignalDesign, noise_psd: f64, seed: u64) -> Result<Observations, ChannelError> {
    let grid = &h.grid;
    design.validate(grid, h.rx_elements(), h.tx_elements())?;
    if !noise_psd.is_finite() || noise_psd < 0.0 {
        return Err(ChannelError::Configuration("noise PSD must be finite and non-negative".into()));
    }
    let variance = noise_psd * grid.subcarrier_spacing_hz;
    let sigma = (variance / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wh = design.combiner.adjoint();
    let mut data = Vec::with_capacity(grid.n_subcarriers * grid.n_symbols);
    for i in 0..grid.n_subcarriers {
        let amp = design.powers[i].sqrt();
        for k in 0..grid.n_symbols {
            let mut y = &wh * (h.get(i, k) * design.precoder(grid, i, k)) * Complex64::new(amp, 0.0);
            if variance > 0.0 {
                for v in y.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *v += Complex64::new(sigma * re, sigma * im);
                }
            }
            data.push(y);
        }
    }
    Observations::new(grid.clone(), variance, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synthesize;
    use crate::scenario::{ArrayGeometry, Scenario};
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector3};

    fn setup() -> (ChannelTensor, SignalDesign) {
        let lambda = 299_792_458.0 / 28e9;
        let s = Scenario::los(
            ArrayGeometry::ula(Vector3::zeros(), Rotation3::identity(), 4, lambda / 2.0),
            ArrayGeometry::ula(Vector3::new(6.0, 2.0, 0.0), Rotation3::from_euler_angles(0.0, 0.0, 3.0), 2, lambda / 2.0),
            SpectralGrid::with_bandwidth(28e9, 100e6, 4, 2).unwrap(),
        );
        let h = synthesize(&s).unwrap();
        let mut design = SignalDesign::random_beams(4, 2, &s.grid, 1.0, 3);
        design.combiner = DMatrix::from_column_slice(2, 1, &[Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        (h, design)
    }

    #[test]
    fn noiseless_is_deterministic_product() {
        let (h, d) = setup();
        let y = observe(&h, &d, 0.0, 1).unwrap();
        for i in 0..4 {
            for k in 0..2 {
                let expected = d.combiner.column(0).dotc(&(h.get(i, k) * d.precoder(&h.grid, i, k))) * d.powers[i].sqrt();
                assert_relative_eq!((y.get(i, k)[0] - expected).norm(), 0.0, epsilon = 1e-20);
            }
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let (h, d) = setup();
        assert_eq!(observe(&h, &d, 1e-20, 9).unwrap(), observe(&h, &d, 1e-20, 9).unwrap());
        assert_ne!(observe(&h, &d, 1e-20, 9).unwrap(), observe(&h, &d, 1e-20, 10).unwrap());
    }

    #[test]
    fn monte_carlo_snr_matches_closed_form() {
        let (h, d) = setup();
        let clean = observe(&h, &d, 0.0, 0).unwrap().get(0, 0)[0];
        let psd = clean.norm_sqr() / h.grid.subcarrier_spacing_hz / 10.0;
        let draws = 10_000;
        let mut noise_power = 0.0;
        for seed in 0..draws {
            let y = observe(&h, &d, psd, seed).unwrap();
            noise_power += (y.get(0, 0)[0] - clean).norm_sqr();
        }
        let snr_mc = clean.norm_sqr() / (noise_power / draws as f64);
        let snr = clean.norm_sqr() / (psd * h.grid.subcarrier_spacing_hz);
        assert!((snr_mc / snr - 1.0).abs() < 0.03, "{snr_mc} vs {snr}");
    }

    #[test]
    fn dimension_mismatch() {
        let (h, mut d) = setup();
        d.combiner = DMatrix::identity(3, 3);
        assert!(matches!(observe(&h, &d, 0.0, 0), Err(ChannelError::Dimension(_))));
        let (h, mut d) = setup();
        d.powers.pop();
        assert!(observe(&h, &d, 0.0, 0).is_err());
    }
}
