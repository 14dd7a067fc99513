use nalgebra::{DMatrix, DVector};

use super::Policy;

/// Block form of the policy with all activations isolated:
///
/// ```text
/// [u; ν] = [N_uz  N_uω  N_ub] [Z; ω; 1]
///          [N_νz  N_νω  N_νb]
/// ```
///
/// `N_νω` is strictly block-lower-triangular: layer `i` reads only the
/// outputs of layer `i - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolatedPolicy {
    pub n_uz: DMatrix<f64>,
    pub n_uw: DMatrix<f64>,
    pub n_vz: DMatrix<f64>,
    pub n_vw: DMatrix<f64>,
    pub n_ub: f64,
    pub n_vb: DVector<f64>,
    pub layer_sizes: Vec<usize>,
}

impl IsolatedPolicy {
    pub fn n0(&self) -> usize {
        self.n_vz.ncols()
    }

    pub fn n_phi(&self) -> usize {
        self.n_vw.nrows()
    }

    /// Row ranges of each layer inside the stacked neuron vector.
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        layer_ranges(&self.layer_sizes)
    }

    /// `(u, ν, ω)` by forward substitution through the block map.
    pub fn evaluate(&self, z: &[f64]) -> (f64, DVector<f64>, DVector<f64>) {
        let z = DVector::from_column_slice(z);
        let mut nu = DVector::zeros(self.n_phi());
        let mut omega = DVector::zeros(self.n_phi());
        for r in self.layer_ranges() {
            for i in r.clone() {
                let v = (self.n_vz.row(i) * &z)[0] + (self.n_vw.row(i) * &omega)[0] + self.n_vb[i];
                nu[i] = v;
            }
            for i in r {
                omega[i] = nu[i].tanh();
            }
        }
        let u = (&self.n_uz * &z)[0] + (&self.n_uw * &omega)[0] + self.n_ub;
        (u, nu, omega)
    }
}

pub(crate) fn layer_ranges(sizes: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let r = start..start + s;
            start += s;
            r
        })
        .collect()
}

pub fn isolate(policy: &Policy) -> IsolatedPolicy {
    let n0 = policy.input_dim();
    let sizes = policy.layer_sizes();
    let n_phi: usize = sizes.iter().sum();
    let ranges = layer_ranges(&sizes);

    let mut n_vz = DMatrix::zeros(n_phi, n0);
    let mut n_vw = DMatrix::zeros(n_phi, n_phi);
    let mut n_vb = DVector::zeros(n_phi);
    for (i, layer) in policy.layers.iter().enumerate() {
        let rows = ranges[i].clone();
        if i == 0 {
            n_vz.view_mut((rows.start, 0), (rows.len(), n0)).copy_from(&layer.w);
        } else {
            let cols = ranges[i - 1].clone();
            n_vw.view_mut((rows.start, cols.start), (rows.len(), cols.len())).copy_from(&layer.w);
        }
        n_vb.rows_mut(rows.start, rows.len()).copy_from(&layer.b);
    }
    let mut n_uw = DMatrix::zeros(1, n_phi);
    let last = ranges.last().cloned().unwrap_or(0..0);
    n_uw.view_mut((0, last.start), (1, last.len())).copy_from(&policy.output.w);

    IsolatedPolicy {
        n_uz: DMatrix::zeros(1, n0),
        n_uw,
        n_vz,
        n_vw,
        n_ub: policy.output.b[0],
        n_vb,
        layer_sizes: sizes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_structure_of_two_layer_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Policy::random(2, &[3, 4], &mut rng).unwrap();
        let iso = isolate(&p);
        // Only block (2,1) of N_νω is populated, and it equals W_2.
        assert_eq!(iso.n_vw.view((3, 0), (4, 3)).into_owned(), p.layers[1].w);
        let mut rest = iso.n_vw.clone();
        rest.view_mut((3, 0), (4, 3)).fill(0.0);
        assert!(rest.iter().all(|&x| x == 0.0));
        // N_uω = [0 W_3].
        assert!(iso.n_uw.view((0, 0), (1, 3)).iter().all(|&x| x == 0.0));
        assert_eq!(iso.n_uw.view((0, 3), (1, 4)).into_owned(), p.output.w);
        // Nilpotent: N_νω^ℓ = 0.
        assert!((&iso.n_vw * &iso.n_vw).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Policy::random(3, &[5, 6, 4], &mut rng).unwrap();
        let iso = isolate(&p);
        for _ in 0..100 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (u, _, _) = iso.evaluate(&z);
            assert_eq!(u, p.forward(&z).unwrap());
        }
    }
}
