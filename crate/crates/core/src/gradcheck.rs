//! Central finite-difference gradient checking against the analytic
//! gradients held in a [`ParameterStore`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterStore};

/// One loss evaluation, with the distance to the nearest hinge kink so
/// coordinates straddling a non-differentiable point can be skipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossProbe {
    pub loss: f64,
    /// Smallest `|margin|` over hinge terms; `INFINITY` for smooth losses.
    pub kink_distance: f64,
}

impl LossProbe {
    pub fn smooth(loss: f64) -> Self {
        LossProbe {
            loss,
            kink_distance: f64::INFINITY,
        }
    }
}

/// Coordinates closer than `KINK_FACTOR * h` to a hinge kink are excluded.
pub const KINK_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateCheck {
    pub param: String,
    pub flat_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest `|analytic − numeric|`, a useful scale when the relative error
    /// is dominated by rounding in coordinates with tiny gradients.
    pub max_abs_error: f64,
    pub checked: usize,
    pub excluded: usize,
    pub worst: Option<CoordinateCheck>,
    /// Every compared coordinate, in sample order.
    pub checks: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    pub fn failures(&self, tolerance: f64) -> impl Iterator<Item = &CoordinateCheck> {
        self.checks.iter().filter(move |c| c.rel_error >= tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Picks `count` coordinates uniformly over all parameter elements.
pub fn sample_coordinates<R: Rng>(
    store: &ParameterStore,
    count: usize,
    rng: &mut R,
) -> Vec<(ParamId, usize)> {
    let total = store.total_elements();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut k = rng.gen_range(0..total);
        for id in store.ids() {
            let len = store.value(id).len();
            if k < len {
                out.push((id, k));
                break;
            }
            k -= len;
        }
    }
    out
}

/// Compares the analytic gradients already accumulated in `store` against
/// `(L(θ+h) − L(θ−h)) / 2h` at each sampled coordinate and returns the worst
/// relative error. The store's values are restored afterwards.
pub fn finite_diff_check<F>(
    store: &mut ParameterStore,
    mut loss_fn: F,
    h: f64,
    sample: &[(ParamId, usize)],
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterStore) -> Result<LossProbe>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::invalid(format!(
            "step size must be positive, got {h}"
        )));
    }
    let baseline = loss_fn(store)?;
    let mut report = GradCheckReport::default();
    for &(id, flat) in sample {
        let original = store.coordinate(id, flat);
        store.set_coordinate(id, flat, original + h)?;
        let plus = loss_fn(store);
        store.set_coordinate(id, flat, original - h)?;
        let minus = loss_fn(store);
        store.set_coordinate(id, flat, original)?;
        let (plus, minus) = (plus?, minus?);

        let kink = baseline
            .kink_distance
            .min(plus.kink_distance)
            .min(minus.kink_distance);
        if kink < KINK_FACTOR * h {
            report.excluded += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * h);
        let analytic = store.grad(id).data()[flat];
        let rel_error = relative_error(analytic, numeric);
        let check = CoordinateCheck {
            param: store.name(id).to_string(),
            flat_index: flat,
            analytic,
            numeric,
            rel_error,
        };
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
        if report.worst.is_none() || rel_error > report.max_rel_error {
            report.max_rel_error = rel_error;
            report.worst = Some(check.clone());
        }
        report.checks.push(check);
    }
    let again = loss_fn(store)?;
    if again.loss.to_bits() != baseline.loss.to_bits() {
        return Err(Error::NonDeterministic {
            first: baseline.loss,
            second: again.loss,
        });
    }
    Ok(report)
}
