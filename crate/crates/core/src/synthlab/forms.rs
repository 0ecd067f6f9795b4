//! Seventeen candidate error-vs-γ curves fitted by nonlinear least squares.
//!
//! Each form is linear in an intercept and slopes and (optionally) nonlinear
//! in one or two shape parameters θ. The linear part is solved by OLS for
//! every θ (variable projection); θ itself is refined by damped Gauss-Newton
//! from 20 seeded starting points.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use super::sweep::{LayerKind, SweepCurve};
use crate::error::{Error, Result};
use crate::formula::{fit_ols, pearson};
use crate::rng::{self, StreamRng};

const RESTARTS: usize = 20;
const MAX_ITERS: usize = 200;
const MIN_POINTS: usize = 10;
const TIE_EPS: f64 = 1e-9;

type Basis = fn(f64, &[f64]) -> Vec<f64>;
type Init = fn(&mut StreamRng) -> Vec<f64>;

struct Form {
    name: &'static str,
    label: &'static str,
    basis: Basis,
    init: Option<Init>,
}

fn sigm(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn init_rate(r: &mut StreamRng) -> Vec<f64> {
    vec![r.random_range(-8.0..8.0)]
}

fn init_power(r: &mut StreamRng) -> Vec<f64> {
    vec![r.random_range(0.05f64.ln()..8f64.ln()).exp()]
}

fn init_step(r: &mut StreamRng) -> Vec<f64> {
    vec![
        r.random_range(0.5f64.ln()..50f64.ln()).exp(),
        r.random_range(-0.5..1.5),
    ]
}

static FORMS: [Form; 17] = [
    Form {
        name: "linear",
        label: "Linear",
        basis: |g, _| vec![g],
        init: None,
    },
    Form {
        name: "quadratic",
        label: "Quadratic",
        basis: |g, _| vec![g, g * g],
        init: None,
    },
    Form {
        name: "cubic",
        label: "Cubic",
        basis: |g, _| vec![g, g * g, g.powi(3)],
        init: None,
    },
    Form {
        name: "quartic",
        label: "Quartic",
        basis: |g, _| vec![g, g * g, g.powi(3), g.powi(4)],
        init: None,
    },
    Form {
        name: "sqrt",
        label: "√γ",
        basis: |g, _| vec![g.sqrt()],
        init: None,
    },
    Form {
        name: "cbrt",
        label: "∛γ",
        basis: |g, _| vec![g.cbrt()],
        init: None,
    },
    Form {
        name: "fourth_root",
        label: "∜γ",
        basis: |g, _| vec![g.powf(0.25)],
        init: None,
    },
    Form {
        name: "log",
        label: "log γ",
        basis: |g, _| vec![g.ln()],
        init: None,
    },
    Form {
        name: "log_linear",
        label: "log + γ",
        basis: |g, _| vec![g.ln(), g],
        init: None,
    },
    Form {
        name: "log_quadratic",
        label: "log + γ + γ²",
        basis: |g, _| vec![g.ln(), g, g * g],
        init: None,
    },
    Form {
        name: "exponential",
        label: "Exponential e^{cγ}",
        basis: |g, t| vec![(t[0] * g).exp()],
        init: Some(init_rate),
    },
    Form {
        name: "exp_decay",
        label: "Exp decay e^{-c(1-γ)}",
        basis: |g, t| vec![(-t[0] * (1.0 - g)).exp()],
        init: Some(init_rate),
    },
    Form {
        name: "linear_exp",
        label: "γ + e^{cγ}",
        basis: |g, t| vec![g, (t[0] * g).exp()],
        init: Some(init_rate),
    },
    Form {
        name: "power_law",
        label: "Power law γ^c",
        basis: |g, t| vec![g.powf(t[0])],
        init: Some(init_power),
    },
    Form {
        name: "sigmoid",
        label: "Sigmoid",
        basis: |g, t| vec![sigm(t[0] * (g - t[1]))],
        init: Some(init_step),
    },
    Form {
        name: "tanh",
        label: "Tanh",
        basis: |g, t| vec![(t[0] * (g - t[1])).tanh()],
        init: Some(init_step),
    },
    Form {
        name: "sqrt_log",
        label: "√γ + log",
        basis: |g, _| vec![g.sqrt(), g.ln()],
        init: None,
    },
];

pub const FORM_NAMES: [&str; 17] = [
    "linear",
    "quadratic",
    "cubic",
    "quartic",
    "sqrt",
    "cbrt",
    "fourth_root",
    "log",
    "log_linear",
    "log_quadratic",
    "exponential",
    "exp_decay",
    "linear_exp",
    "power_law",
    "sigmoid",
    "tanh",
    "sqrt_log",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormFit {
    pub name: &'static str,
    pub label: &'static str,
    /// NaN for flagged forms.
    pub r: f64,
    pub rmse: f64,
    pub params: usize,
    /// Intercept and slopes.
    pub coefficients: Vec<f64>,
    /// Shape parameters, empty for forms linear in all parameters.
    pub theta: Vec<f64>,
    /// No start produced a finite, non-constant fit.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormRanking {
    pub layer_kind: Option<LayerKind>,
    pub fits: Vec<FormFit>,
}

impl FormRanking {
    pub fn get(&self, name: &str) -> Option<&FormFit> {
        self.fits.iter().find(|f| f.name == name)
    }

    /// One-based rank of `name`.
    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.fits.iter().position(|f| f.name == name).map(|i| i + 1)
    }
}

struct Problem<'a> {
    x: &'a [f64],
    y: DVector<f64>,
}

impl Problem<'_> {
    fn design(&self, form: &Form, theta: &[f64]) -> Option<DMatrix<f64>> {
        let rows: Vec<Vec<f64>> = self.x.iter().map(|&g| (form.basis)(g, theta)).collect();
        let p = rows[0].len();
        let m = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        m.iter().all(|v| v.is_finite()).then_some(m)
    }

    /// Residual vector and linear coefficients at θ.
    fn residual(&self, form: &Form, theta: &[f64]) -> Option<(DVector<f64>, Vec<f64>)> {
        let x = self.design(form, theta)?;
        let fit = fit_ols(&x, &self.y).ok()?;
        let r = &self.y - fit.predict_all(&x);
        r.iter()
            .all(|v| v.is_finite())
            .then_some((r, fit.coefficients))
    }

    /// Levenberg-Marquardt on θ with a central-difference Jacobian.
    fn refine(&self, form: &Form, mut theta: Vec<f64>) -> Option<(f64, Vec<f64>)> {
        let (mut r, _) = self.residual(form, &theta)?;
        let mut sse = r.norm_squared();
        let mut lambda = 1e-3;
        let q = theta.len();
        for _ in 0..MAX_ITERS {
            let mut jac = DMatrix::zeros(r.len(), q);
            for j in 0..q {
                let h = 1e-6 * theta[j].abs().max(1.0);
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let (ru, _) = self.residual(form, &up)?;
                let (rd, _) = self.residual(form, &dn)?;
                jac.set_column(j, &((ru - rd) / (2.0 * h)));
            }
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * &r;
            let mut improved = false;
            while lambda < 1e12 {
                let mut a = jtj.clone();
                for i in 0..q {
                    a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
                }
                let Some(step) = a.lu().solve(&(-&grad)) else {
                    lambda *= 4.0;
                    continue;
                };
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
                match self.residual(form, &cand) {
                    Some((rc, _)) if rc.norm_squared() < sse => {
                        let gain = sse - rc.norm_squared();
                        theta = cand;
                        r = rc;
                        sse = r.norm_squared();
                        lambda = (lambda / 3.0).max(1e-12);
                        improved = gain > 1e-15 * sse.max(1e-300);
                        break;
                    }
                    _ => lambda *= 4.0,
                }
            }
            if !improved {
                break;
            }
        }
        Some((sse, theta))
    }

    fn fit(&self, index: usize, seed: u64) -> FormFit {
        let form = &FORMS[index];
        let n = self.x.len();
        let best = match form.init {
            None => self
                .residual(form, &[])
                .map(|(r, _)| (r.norm_squared(), Vec::new())),
            Some(init) => {
                let mut rng = rng::substream(seed, index as u64);
                let mut best: Option<(f64, Vec<f64>)> = None;
                for _ in 0..RESTARTS {
                    let start = init(&mut rng);
                    if let Some((sse, theta)) = self.refine(form, start) {
                        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
                            best = Some((sse, theta));
                        }
                    }
                }
                best
            }
        };
        let width = (form.basis)(0.5, &[1.0, 0.5]).len();
        let params = 1 + width + form.init.map_or(0, |i| i(&mut rng::stream(0)).len());
        let scored = best.and_then(|(sse, theta)| {
            let x = self.design(form, &theta)?;
            let fit = fit_ols(&x, &self.y).ok()?;
            let yhat = fit.predict_all(&x);
            let r = pearson(self.y.as_slice(), yhat.as_slice()).ok()?;
            Some((r, (sse / n as f64).sqrt(), fit.coefficients, theta))
        });
        match scored {
            Some((r, rmse, coefficients, theta)) => FormFit {
                name: form.name,
                label: form.label,
                r,
                rmse,
                params,
                coefficients,
                theta,
                flagged: false,
            },
            None => FormFit {
                name: form.name,
                label: form.label,
                r: f64::NAN,
                rmse: f64::NAN,
                params,
                coefficients: Vec::new(),
                theta: Vec::new(),
                flagged: true,
            },
        }
    }
}

fn rank(mut fits: Vec<FormFit>) -> Vec<FormFit> {
    let order = |f: &FormFit| {
        FORM_NAMES
            .iter()
            .position(|n| *n == f.name)
            .unwrap_or(usize::MAX)
    };
    fits.sort_by(|a, b| {
        a.flagged
            .cmp(&b.flagged)
            .then_with(|| b.r.total_cmp(&a.r))
            .then_with(|| order(a).cmp(&order(b)))
    });
    let (good, bad): (Vec<_>, Vec<_>) = fits.into_iter().partition(|f| !f.flagged);
    let mut out = Vec::with_capacity(good.len() + bad.len());
    let mut rest = good.as_slice();
    while let Some(lead) = rest.first() {
        let len = rest.iter().take_while(|f| lead.r - f.r <= TIE_EPS).count();
        let mut group = rest[..len].to_vec();
        group.sort_by(|a, b| {
            a.params
                .cmp(&b.params)
                .then_with(|| order(a).cmp(&order(b)))
        });
        out.extend(group);
        rest = &rest[len..];
    }
    out.extend(bad);
    out
}

/// Fits all 17 forms to (γ, error) pairs and ranks them by Pearson r, with
/// near-ties going to fewer parameters.
pub fn fit_forms_xy(gamma: &[f64], errors: &[f64], seed: u64) -> Result<FormRanking> {
    if gamma.len() != errors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} grid points, {} errors",
            gamma.len(),
            errors.len()
        )));
    }
    if gamma.len() < MIN_POINTS {
        return Err(Error::TooFewSamples {
            needed: MIN_POINTS,
            have: gamma.len(),
        });
    }
    if gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::InvalidInput("grid points must be positive".into()));
    }
    let problem = Problem {
        x: gamma,
        y: DVector::from_column_slice(errors),
    };
    let fits = (0..FORMS.len()).map(|i| problem.fit(i, seed)).collect();
    Ok(FormRanking {
        layer_kind: None,
        fits: rank(fits),
    })
}

pub fn fit_forms(curve: &SweepCurve) -> Result<FormRanking> {
    let mut ranking = fit_forms_xy(&curve.gamma_grid, &curve.rel_errors, curve.seed)?;
    ranking.layer_kind = Some(curve.layer_kind);
    Ok(ranking)
}
