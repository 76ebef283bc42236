use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use qtensor::Tensor;

use crate::scene::Vec3;

/// Random Fourier features `[cos(2π p Wᵀ) ‖ sin(2π p Wᵀ)]` with a fixed
/// Gaussian frequency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierPE {
    /// F×3
    w: Tensor,
}

impl FourierPE {
    pub fn new(frequencies: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let data = (0..frequencies * 3).map(|_| normal.sample(&mut rng)).collect();
        Self::from_matrix(Tensor::new(vec![frequencies, 3], data).expect("sized"))
    }

    pub fn from_matrix(w: Tensor) -> Self {
        assert_eq!(w.cols(), 3, "frequency matrix must be F×3");
        Self { w }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.w
    }

    pub fn frequencies(&self) -> usize {
        self.w.rows()
    }

    pub fn dim(&self) -> usize {
        2 * self.frequencies()
    }

    /// Encodes one coordinate into `out` (length `2F`).
    pub fn encode_into(&self, p: &Vec3, out: &mut [f64]) {
        let f = self.frequencies();
        for k in 0..f {
            let row = self.w.row(k);
            let t = 2.0 * std::f64::consts::PI * (p[0] * row[0] + p[1] * row[1] + p[2] * row[2]);
            out[k] = t.cos();
            out[f + k] = t.sin();
        }
    }

    pub fn encode(&self, coords: &[Vec3]) -> Tensor {
        let d = self.dim();
        let mut data = vec![0.0; coords.len() * d];
        for (p, out) in coords.iter().zip(data.chunks_exact_mut(d)) {
            self.encode_into(p, out);
        }
        Tensor::new(vec![coords.len(), d], data).expect("sized")
    }
}
