//! Central-difference gradient oracle.

use std::collections::BTreeMap;

use super::{Gradients, NumericsError, ParamStore, Scalar, Tensor};

/// One coordinate of one named parameter.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Coord {
    pub name: String,
    pub index: usize,
}

fn eval<S: Scalar, F>(f: &F, params: &ParamStore<S>) -> Result<f64, NumericsError>
where
    F: Fn(&ParamStore<S>) -> Result<f64, NumericsError>,
{
    let v = f(params)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NumericsError::NonFinite { op: "finite_diff" })
    }
}

/// `(f(θ + h·e) − f(θ − h·e)) / 2h` for every coordinate of every parameter.
pub fn finite_diff_grad<S: Scalar, F>(
    f: F,
    params: &ParamStore<S>,
    h: f64,
) -> Result<Gradients<S>, NumericsError>
where
    F: Fn(&ParamStore<S>) -> Result<f64, NumericsError>,
{
    let coords: Vec<Coord> = params
        .iter()
        .flat_map(|(name, t)| {
            (0..t.len()).map(move |index| Coord {
                name: name.clone(),
                index,
            })
        })
        .collect();
    let values = finite_diff_at(&f, params, &coords, h)?;
    let mut out: BTreeMap<String, Tensor<S>> = params
        .iter()
        .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
        .collect();
    for (c, v) in coords.iter().zip(values) {
        out.get_mut(&c.name).expect("coordinate of known param").data_mut()[c.index] = S::of(v);
    }
    Ok(Gradients::from_map(out))
}

/// Central differences at selected coordinates only.
pub fn finite_diff_at<S: Scalar, F>(
    f: &F,
    params: &ParamStore<S>,
    coords: &[Coord],
    h: f64,
) -> Result<Vec<f64>, NumericsError>
where
    F: Fn(&ParamStore<S>) -> Result<f64, NumericsError>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(NumericsError::Unsupported(format!("finite-difference step {h}")));
    }
    let mut work = params.clone();
    let mut out = Vec::with_capacity(coords.len());
    for c in coords {
        let orig = params
            .get(&c.name)
            .ok_or_else(|| NumericsError::MissingParameter(c.name.clone()))?
            .data()[c.index];
        set(&mut work, c, orig + S::of(h));
        let plus = eval(f, &work)?;
        set(&mut work, c, orig - S::of(h));
        let minus = eval(f, &work)?;
        set(&mut work, c, orig);
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

fn set<S: Scalar>(ps: &mut ParamStore<S>, c: &Coord, v: S) {
    ps.get_mut(&c.name).expect("known param").data_mut()[c.index] = v;
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(name: &str, data: Vec<f64>) -> ParamStore<f64> {
        let mut ps = ParamStore::new();
        let n = data.len();
        ps.insert(name, Tensor::new(vec![n], data).unwrap());
        ps
    }

    #[test]
    fn exact_for_quadratics() {
        let ps = store("x", vec![3.0]);
        for h in [1e-3, 0.1, 0.7] {
            let g = finite_diff_grad(|p| Ok(p.get("x").unwrap().item().powi(2)), &ps, h).unwrap();
            assert!((g.get("x").unwrap().item() - 6.0).abs() < 1e-9, "h = {h}");
        }
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let ps = store("x", vec![1.0, -2.0, 5.0]);
        let g = finite_diff_grad(|_| Ok(4.2), &ps, 1e-3).unwrap();
        assert!(g.get("x").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_sum_at_origin() {
        let ps = store("x", vec![0.0; 4]);
        let g = finite_diff_grad(
            |p| Ok(p.get("x").unwrap().data().iter().map(|v| v.sin()).sum()),
            &ps,
            1e-4,
        )
        .unwrap();
        for &v in g.get("x").unwrap().data() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_step_and_non_finite_values() {
        let ps = store("x", vec![0.0]);
        assert!(finite_diff_grad(|_| Ok(1.0), &ps, 0.0).is_err());
        let r = finite_diff_grad(|p| Ok(p.get("x").unwrap().item().ln()), &ps, 1e-3);
        assert!(r.is_err());
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
    }
}
