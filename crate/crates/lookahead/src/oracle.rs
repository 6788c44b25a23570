//! Analytic closed forms and brute-force reference computations used to
//! validate the optimizers and equilibrium solvers at desk scale.
//!
//! These are independent code paths: no optimizer or equilibrium logic is
//! shared with the modules they check. Grid argmax ties break toward the
//! lexicographically smallest grid index.

use nalgebra::DVector;

use crate::collective::{family_utility, FamilyContext, StrategyFamily};
use crate::error::{Error, Result};
use crate::population::{EmpiricalDistribution, Model, Sample};
use crate::utility::Utility;

/// Equilateral anchor triangle centered at the origin; `r` is the
/// circumradius.
#[derive(Debug, Clone)]
pub struct TriangleSetting {
    pub anchors: [DVector<f64>; 3],
    pub r: f64,
}

impl TriangleSetting {
    /// Canonical anchors for circumradius `r`:
    /// `(-sqrt(3)/2, -1/2), (sqrt(3)/2, -1/2), (0, 1)` scaled by `r`.
    pub fn with_radius(r: f64) -> Result<Self> {
        if r < 0.0 || !r.is_finite() {
            return Err(Error::InvalidParameter("radius must be finite and >= 0".into()));
        }
        let s = 3.0_f64.sqrt() / 2.0;
        Ok(TriangleSetting {
            anchors: [
                DVector::from_column_slice(&[-s * r, -0.5 * r]),
                DVector::from_column_slice(&[s * r, -0.5 * r]),
                DVector::from_column_slice(&[0.0, r]),
            ],
            r,
        })
    }

    /// Recenters the given anchors at their centroid and checks they form an
    /// equilateral triangle within 1e-9.
    pub fn from_anchors(p1: DVector<f64>, p2: DVector<f64>, p3: DVector<f64>) -> Result<Self> {
        let centroid = (&p1 + &p2 + &p3) / 3.0;
        let anchors = [&p1 - &centroid, &p2 - &centroid, &p3 - &centroid];
        let sides = [
            (&anchors[0] - &anchors[1]).norm(),
            (&anchors[1] - &anchors[2]).norm(),
            (&anchors[2] - &anchors[0]).norm(),
        ];
        if (sides[0] - sides[1]).abs() > 1e-9 || (sides[1] - sides[2]).abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "anchors do not form an equilateral triangle".into(),
            ));
        }
        let r = anchors[2].norm();
        Ok(TriangleSetting { anchors, r })
    }

    pub fn anchor_vec(&self) -> Vec<DVector<f64>> {
        self.anchors.to_vec()
    }

    /// Anchor distribution as samples with zero labels.
    pub fn anchor_distribution(&self) -> EmpiricalDistribution {
        EmpiricalDistribution::uniform(
            self.anchors
                .iter()
                .map(|p| Sample::new(p.clone(), 0.0))
                .collect(),
        )
        .expect("three anchors")
    }
}

/// The published closed-form quantities of the anchor-triangle setting.
///
/// `phi` and `gamma_u` are the values as reported in the source analysis
/// (`phi = -2 r^2`, `gamma_u = 2 r^2`); their ratio `phi^2 / (2 gamma_u) =
/// r^2` is the benefit bound. The inverse-curvature pairing computed by the
/// pipeline evaluates to `-r^2` with segment concavity `r^2 / 2`, which
/// yields the same bound.
#[derive(Debug, Clone)]
pub struct TriangleClosedForm {
    pub theta_star: Model,
    pub theta_sharp: Model,
    pub w_star: DVector<f64>,
    pub w_sharp: DVector<f64>,
    pub phi: f64,
    pub benefit: f64,
    pub gamma_u: f64,
}

pub fn triangle_closed_form(setting: &TriangleSetting) -> TriangleClosedForm {
    let r2 = setting.r * setting.r;
    let theta_star = Model::new((&setting.anchors[0] + &setting.anchors[1] + &setting.anchors[2]) / 3.0);
    let theta_sharp = Model::new((&setting.anchors[0] + &setting.anchors[1]) / 2.0);
    TriangleClosedForm {
        theta_star,
        theta_sharp,
        w_star: DVector::from_element(3, 1.0 / 3.0),
        w_sharp: DVector::from_column_slice(&[0.5, 0.5, 0.0]),
        phi: -2.0 * r2,
        benefit: 0.75 * r2,
        gamma_u: 2.0 * r2,
    }
}

/// Exhaustive evaluation of the collective objective on the simplex grid
/// `{w : w_i multiples of step, sum w_i = 1}`. Each evaluation fits the
/// centroid `theta = sum w_i p_i` directly (the squared-loss minimizer) and
/// computes the expected utility of the anchor distribution; no solver code
/// is involved.
pub fn simplex_brute_force(
    setting: &TriangleSetting,
    utility: &dyn Utility,
    step: f64,
) -> Result<(DVector<f64>, f64)> {
    if !(0.0 < step && step <= 0.5) {
        return Err(Error::InvalidParameter("step must lie in (0, 0.5]".into()));
    }
    let n = (1.0 / step).round() as usize;
    let mut best: Option<(DVector<f64>, f64)> = None;
    for i in 0..=n {
        for j in 0..=(n - i) {
            let k = n - i - j;
            let w = DVector::from_column_slice(&[
                i as f64 / n as f64,
                j as f64 / n as f64,
                k as f64 / n as f64,
            ]);
            let theta = Model::new(
                &setting.anchors[0] * w[0] + &setting.anchors[1] * w[1] + &setting.anchors[2] * w[2],
            );
            let mut value = 0.0;
            for (idx, p) in setting.anchors.iter().enumerate() {
                value += w[idx] * utility.value(&Sample::new(p.clone(), 0.0), &theta);
            }
            let better = match &best {
                None => true,
                Some((_, b)) => value > *b,
            };
            if better {
                best = Some((w, value));
            }
        }
    }
    Ok(best.expect("grid nonempty"))
}

/// Closed-form benefit of the label-modification lever:
/// `sum over distinct x of weight(x) * (E[y|x] - g(x))^2`.
#[derive(Debug, Clone)]
pub struct LabelLeverBound {
    pub value: f64,
    /// Whether a linear-with-intercept model can represent `E[y|x]` on this
    /// base (checked by exact interpolation of the grouped means). The
    /// formula presumes it; the flag warns when it fails.
    pub representable: bool,
}

pub fn label_lever_closed_form<G>(base: &EmpiricalDistribution, g: G) -> Result<LabelLeverBound>
where
    G: Fn(&DVector<f64>) -> f64,
{
    // Group identical feature vectors (exact match; the shipped instances use
    // exact binary features).
    let mut groups: Vec<(DVector<f64>, f64, f64)> = Vec::new(); // (x, weight, weighted y)
    for (s, w) in base.iter() {
        match groups.iter_mut().find(|(x, _, _)| x == &s.x) {
            Some((_, gw, gy)) => {
                *gw += w;
                *gy += w * s.y;
            }
            None => groups.push((s.x.clone(), w, w * s.y)),
        }
    }
    let mut value = 0.0;
    for (x, w, wy) in &groups {
        let cond_mean = wy / w;
        let gap = cond_mean - g(x);
        value += w * gap * gap;
    }

    // Representability: least-squares fit of the conditional means by a
    // linear model with intercept must interpolate them.
    let d = base.dim();
    let m = groups.len();
    let mut design = nalgebra::DMatrix::zeros(m, d + 1);
    let mut target = DVector::zeros(m);
    for (row, (x, w, wy)) in groups.iter().enumerate() {
        for c in 0..d {
            design[(row, c)] = x[c];
        }
        design[(row, d)] = 1.0;
        target[row] = wy / w;
    }
    let svd = design.clone().svd(true, true);
    let coef = svd
        .solve(&target, 1e-12)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let residual = (&design * &coef - &target).norm();
    Ok(LabelLeverBound {
        value,
        representable: residual <= 1e-8,
    })
}

/// Exhaustive sweep of the family utility over a finite grid; the reference
/// for the gradient-based strategy optimizer. Only low-dimensional
/// parameters are supported.
pub fn stackelberg_grid(
    family: &dyn StrategyFamily,
    bounds: &[(f64, f64)],
    step: f64,
    ctx: &FamilyContext<'_>,
) -> Result<(DVector<f64>, f64)> {
    if bounds.len() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            got: bounds.len(),
            context: "grid bounds per parameter",
        });
    }
    if family.dim() > 2 {
        return Err(Error::InvalidParameter(
            "grid oracle supports at most 2 parameters".into(),
        ));
    }
    if step <= 0.0 {
        return Err(Error::InvalidParameter("step must be > 0".into()));
    }
    for (lo, hi) in bounds {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidParameter("bounds must be finite with lo <= hi".into()));
        }
    }
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| (lo + i as f64 * step).min(hi)).collect()
    };
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut consider = |eta: DVector<f64>| -> Result<()> {
        let value = family_utility(family, &eta, ctx)?;
        let better = match &best {
            None => true,
            Some((_, b)) => value > *b,
        };
        if better {
            best = Some((eta, value));
        }
        Ok(())
    };
    match family.dim() {
        1 => {
            for v in axis(bounds[0].0, bounds[0].1) {
                consider(DVector::from_element(1, v))?;
            }
        }
        2 => {
            for v0 in axis(bounds[0].0, bounds[0].1) {
                for v1 in axis(bounds[1].0, bounds[1].1) {
                    consider(DVector::from_column_slice(&[v0, v1]))?;
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(best.expect("grid nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collective::ShiftFamily;
    use crate::learner::SolverConfig;
    use crate::loss::SquaredScalar;
    use crate::objective::Objective;
    use crate::utility::{AnchorPreference, TargetModel};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn closed_form_reference_values() {
        let setting = TriangleSetting::with_radius(1.0).unwrap();
        let cf = triangle_closed_form(&setting);
        assert_abs_diff_eq!(cf.theta_star.theta[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cf.theta_star.theta[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cf.theta_sharp.theta[1], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cf.phi, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cf.benefit, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(cf.gamma_u, 2.0, epsilon = 1e-12);

        let cf2 = triangle_closed_form(&TriangleSetting::with_radius(2.0).unwrap());
        assert_abs_diff_eq!(cf2.phi, -8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cf2.benefit, 3.0, epsilon = 1e-12);

        let cf0 = triangle_closed_form(&TriangleSetting::with_radius(0.0).unwrap());
        assert_abs_diff_eq!(cf0.phi, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cf0.benefit, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn from_anchors_recenters_and_validates() {
        let off = dvector![10.0, -3.0];
        let s = 3.0_f64.sqrt() / 2.0;
        let setting = TriangleSetting::from_anchors(
            dvector![-s, -0.5] + &off,
            dvector![s, -0.5] + &off,
            dvector![0.0, 1.0] + &off,
        )
        .unwrap();
        assert_abs_diff_eq!(setting.r, 1.0, epsilon = 1e-9);
        assert!(TriangleSetting::from_anchors(
            dvector![0.0, 0.0],
            dvector![1.0, 0.0],
            dvector![5.0, 5.0]
        )
        .is_err());
    }

    fn triangle_utility(setting: &TriangleSetting) -> AnchorPreference {
        AnchorPreference::new(setting.anchors[0].clone(), setting.anchors[1].clone())
    }

    #[test]
    fn brute_force_finds_sharp_weights() {
        let setting = TriangleSetting::with_radius(1.0).unwrap();
        let u = triangle_utility(&setting);
        let (w, value) = simplex_brute_force(&setting, &u, 0.01).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 0.01);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 0.01);
        assert_abs_diff_eq!(w[2], 0.0, epsilon = 0.01);
        assert_abs_diff_eq!(value, -2.25, epsilon = 0.02);
    }

    #[test]
    fn brute_force_coarse_grid_ranks_sharp_over_uniformish() {
        let setting = TriangleSetting::with_radius(1.0).unwrap();
        let u = triangle_utility(&setting);
        let (w, _) = simplex_brute_force(&setting, &u, 0.5).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn brute_force_uniform_value() {
        let setting = TriangleSetting::with_radius(1.0).unwrap();
        let u = triangle_utility(&setting);
        // Evaluate the uniform grid point directly through the same path.
        let (_, v) = simplex_brute_force(&setting, &u, 1.0 / 3.0).unwrap();
        // The best grid point at step 1/3 is (2/3, 1/3, 0); uniform sits on
        // the grid too, so check it explicitly through the utility.
        let theta = Model::from_slice(&[0.0, 0.0]);
        let mut uniform_value = 0.0;
        for p in &setting.anchors {
            uniform_value += u.value(&Sample::new(p.clone(), 0.0), &theta) / 3.0;
        }
        assert_abs_diff_eq!(uniform_value, -3.0, epsilon = 1e-9);
        assert!(v >= uniform_value);
    }

    #[test]
    fn label_lever_values() {
        let base = EmpiricalDistribution::uniform(vec![
            Sample::new(dvector![0.0], 0.0),
            Sample::new(dvector![1.0], 1.0),
        ])
        .unwrap();
        let flip = label_lever_closed_form(&base, |x| 1.0 - x[0]).unwrap();
        assert_abs_diff_eq!(flip.value, 1.0, epsilon = 1e-12);
        assert!(flip.representable);

        let truth = label_lever_closed_form(&base, |x| x[0]).unwrap();
        assert_abs_diff_eq!(truth.value, 0.0, epsilon = 1e-12);

        let half = label_lever_closed_form(&base, |_| 0.5).unwrap();
        assert_abs_diff_eq!(half.value, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn grid_oracle_matches_shift_closed_form() {
        let base = EmpiricalDistribution::from_scalars(&[-1.0, 1.0]).unwrap();
        let loss = SquaredScalar::new(1);
        let utility = TargetModel::new(Model::scalar(0.5));
        let solver = SolverConfig::default();
        let family = ShiftFamily::new(vec![dvector![1.0]]).unwrap();

        let ctx = FamilyContext::new(0.3, &base, &base, &loss, &utility, &solver);
        let (eta, best) = stackelberg_grid(&family, &[(0.0, 3.0)], 0.01, &ctx).unwrap();
        assert_abs_diff_eq!(eta[0], 5.0 / 3.0, epsilon = 0.011);
        assert!(best > -1e-4);

        let ctx1 = FamilyContext::new(1.0, &base, &base, &loss, &utility, &solver);
        let (eta1, _) = stackelberg_grid(&family, &[(0.0, 3.0)], 0.01, &ctx1).unwrap();
        assert_abs_diff_eq!(eta1[0], 0.5, epsilon = 0.011);

        let (fixed, _) = stackelberg_grid(&family, &[(0.7, 0.7)], 0.01, &ctx).unwrap();
        assert_abs_diff_eq!(fixed[0], 0.7, epsilon = 1e-12);
    }
}
