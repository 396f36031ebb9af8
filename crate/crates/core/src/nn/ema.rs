use super::param::ParamVector;
use crate::error::{Error, Result};

/// `target <- (1 - tau) * target + tau * online`, elementwise.
pub fn ema_slices(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len());
    let keep = 1.0 - tau;
    for (t, &o) in target.iter_mut().zip(online) {
        *t = keep * *t + tau * o;
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("EMA coefficient {tau} outside [0, 1]")));
    }
    Ok(())
}

/// EMA between two vectors sharing a layout.
pub fn ema_update(target: &mut ParamVector, online: &ParamVector, tau: f64) -> Result<()> {
    check_tau(tau)?;
    target.check_same_layout(online)?;
    ema_slices(target.values_mut(), online.values(), tau);
    Ok(())
}

/// EMA of group `dst` toward group `src` within one vector, e.g.
/// `target_encoder.` toward `encoder.`.
pub fn ema_group(params: &mut ParamVector, dst: &str, src: &str, tau: f64) -> Result<()> {
    check_tau(tau)?;
    let pairs = params.paired_ranges(dst, src)?;
    let values = params.values_mut();
    for (d, s) in pairs {
        // Groups never overlap, so split at the boundary between them.
        if d.start > s.start {
            let (lo, hi) = values.split_at_mut(d.start);
            ema_slices(&mut hi[..d.len()], &lo[s], tau);
        } else {
            let (lo, hi) = values.split_at_mut(s.start);
            ema_slices(&mut lo[d], &hi[..s.len()], tau);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Layout;
    use std::sync::Arc;

    fn pair(t: &[f64], o: &[f64]) -> (ParamVector, ParamVector) {
        let mut l = Layout::new();
        l.push("w", &[t.len()]).unwrap();
        let l = Arc::new(l);
        (
            ParamVector::from_values(l.clone(), t.to_vec()).unwrap(),
            ParamVector::from_values(l, o.to_vec()).unwrap(),
        )
    }

    #[test]
    fn endpoints_are_exact() {
        let (mut t, o) = pair(&[0.3, -1.2], &[5.0, 0.1]);
        ema_update(&mut t, &o, 0.0).unwrap();
        assert_eq!(t.values(), &[0.3, -1.2]);
        ema_update(&mut t, &o, 1.0).unwrap();
        assert_eq!(t.values(), o.values());
    }

    #[test]
    fn one_percent_step() {
        let (mut t, o) = pair(&[1.0], &[0.0]);
        ema_update(&mut t, &o, 0.01).unwrap();
        assert_eq!(t.values(), &[0.99]);
    }

    #[test]
    fn out_of_range_tau_rejected() {
        let (mut t, o) = pair(&[1.0], &[0.0]);
        assert!(ema_update(&mut t, &o, 1.5).is_err());
    }

    #[test]
    fn group_ema_updates_only_target() {
        let mut l = Layout::new();
        l.push("q.0.weight", &[2]).unwrap();
        l.push("target_q.0.weight", &[2]).unwrap();
        let mut p = ParamVector::from_values(Arc::new(l), vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        ema_group(&mut p, "target_q.", "q.", 0.5).unwrap();
        assert_eq!(p.values(), &[1.0, 2.0, 0.5, 1.0]);
    }
}
