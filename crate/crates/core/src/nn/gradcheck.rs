use super::params::Parameters;
use super::tensor::NnError;
use crate::scalar::Scalar;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates probed per tensor; smaller tensors are checked exhaustively.
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, samples_per_tensor: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `f` around `params`.
/// Relative error per coordinate is `|a − n| / max(1, |a|, |n|)`.
pub fn gradient_check<T, P, F>(mut f: F, params: &P, analytic: &P, opts: GradCheckOptions) -> Result<GradCheckReport, NnError>
where
    T: Scalar,
    P: Parameters<T> + Clone,
    F: FnMut(&P) -> Result<T, NnError>,
{
    if !(opts.step > 0.0) {
        return Err(NnError::Numeric("step must be positive".into()));
    }
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<T>> = analytic.tensors().iter().map(|t| t.data().to_vec()).collect();
    if grads.len() != names.len() {
        return Err(NnError::Shape("analytic gradient does not match parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let h = T::of(opts.step);
    let two_h = T::of(2.0 * opts.step);
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, checked: 0 };
    for (ti, name) in names.iter().enumerate() {
        let len = grads[ti].len();
        let coords: Vec<usize> = if len <= opts.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.samples_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for j in coords {
            let orig = probe.tensors()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = orig + h;
            let up = f(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = orig - h;
            let down = f(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(NnError::Numeric(format!("objective not finite at {name}[{j}]")));
            }
            let numeric = ((up - down) / two_h).as_f64();
            let a = grads[ti][j].as_f64();
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), j));
            }
        }
    }
    Ok(report)
}
