use super::{NeuroError, ParamStore, Tape, Var};

/// Largest relative error between analytic gradients and central differences
/// over every scalar of every parameter in `store`.
///
/// The relative error of a pair is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(store: &ParamStore, build: F, step: f64) -> Result<f64, NeuroError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, NeuroError>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64, NeuroError> {
        let mut tape = Tape::new(s);
        let loss = build(&mut tape)?;
        Ok(tape.value(loss).item())
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut s = ParamStore::new();
        let w = s.insert("w", Tensor::vector(vec![0.3, -1.1]));
        let err = finite_diff_check(
            &s,
            |t| {
                let v = t.param(w);
                t.squared_error(v, &[1.0, 2.0])
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
