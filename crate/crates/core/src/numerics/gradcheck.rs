use super::{Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// Worst `|a - n| / max(|a|, |n|, 1e-8)` over all checked coordinates.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped: usize,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks every coordinate of every input.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradcheck_masked(f, inputs, h, |_, _| false)
}

/// Like [`gradcheck`], but coordinates for which `skip(input, index)` holds
/// are excluded (non-differentiable points such as `|x|` at 0).
pub fn gradcheck_masked<F, S>(f: F, inputs: &[Tensor], h: f64, skip: S) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    S: Fn(usize, usize) -> bool,
{
    if !(1e-7..=1e-5).contains(&h) {
        return invalid("gradcheck", format!("step {h} outside [1e-7, 1e-5]"));
    }
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = xs.iter().map(|x| tape.param(x.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "gradcheck" })
        }
    };

    let mut tape = Tape::new();
    let vars = inputs.iter().map(|x| tape.param(x.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> =
        vars.iter().zip(inputs).map(|(&v, x)| grads.get_or_zeros(v, x.shape())).collect();

    let mut work = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        analytic: Vec::new(),
        numeric: Vec::new(),
    };
    for i in 0..inputs.len() {
        let mut num = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            if skip(i, j) {
                report.skipped += 1;
                continue;
            }
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let n = (plus - minus) / (2.0 * h);
            num.data_mut()[j] = n;
            let a = analytic[i].data()[j];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
        numeric.push(num);
    }
    report.analytic = analytic;
    report.numeric = numeric;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let r = gradcheck(
            |t, v| {
                let s = t.square(v[0])?;
                t.sum(s)
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert_eq!(r.analytic[0].data(), &[2.0, 4.0]);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap();
        let r = gradcheck(
            |t, v| {
                let c = t.detach(v[0]);
                t.sum(c)
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(r.analytic[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn detected_wrong_gradient() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        // The detached branch is invisible to the tape but not to finite differences.
        let r = gradcheck(
            |t, v| {
                let d = t.detach(v[0]);
                let p = t.mul(v[0], d)?;
                t.sum(p)
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::scalar(1.0);
        assert!(gradcheck(|t, v| t.sum(v[0]), &[x.clone()], 1e-3).is_err());
        assert!(gradcheck(|t, v| t.sum(v[0]), &[x], 1e-9).is_err());
    }
}
