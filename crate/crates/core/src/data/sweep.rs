use serde::{Deserialize, Serialize};

use super::metrics::{psnr, MetricSet, Summary};
use crate::error::Result;
use crate::nets::UnrolledNetwork;
use crate::train::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_inf: usize,
    pub psnr: Summary,
}

/// Mean PSNR when stopping after each of the `N` unrolled iterations.
pub fn inference_sweep(net: &UnrolledNetwork, samples: &[Sample]) -> Result<Vec<SweepRow>> {
    let n = net.spec.iterations;
    let mut per_stage = vec![Vec::with_capacity(samples.len()); n];
    for s in samples {
        for (k, x) in net.forward_stages(&s.meas)?.iter().enumerate() {
            per_stage[k].push(psnr(&s.target, x)?);
        }
    }
    Ok(per_stage
        .iter()
        .enumerate()
        .map(|(k, v)| SweepRow {
            n_inf: k + 1,
            psnr: Summary::of(v),
        })
        .collect())
}

/// Full metric set of the depth-`N` reconstruction.
pub fn evaluate(net: &UnrolledNetwork, samples: &[Sample]) -> Result<MetricSet> {
    let mut m = MetricSet::default();
    for s in samples {
        m.push(&s.target, &net.forward_full(&s.meas, net.spec.iterations)?)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{NetKind, NetworkSpec};
    use crate::physics::{Measurement, SensingModel};
    use std::sync::Arc;

    #[test]
    fn untrained_net_on_full_sampling_is_exact() {
        // Zero-initialized residuals leave only DC steps. With every
        // frequency sampled and t = 0.5 each step returns A^H y = x.
        let spec = NetworkSpec::new(NetKind::Pgd, 3, 1, 4, 0);
        let net = UnrolledNetwork::new(spec).unwrap();
        let target = crate::data::make_phantom(16, 16, 1).unwrap();
        let model = Arc::new(SensingModel::identity(16, 16, 0.5, 1.0).unwrap());
        let meas = Measurement::simulate(model, &target).unwrap();
        let rows = inference_sweep(&net, &[Sample { meas, target }]).unwrap();
        assert_eq!(rows.len(), 3);
        for r in rows {
            assert!(r.psnr.mean > 250.0 || r.psnr.mean.is_infinite());
        }
    }

    #[test]
    fn untrained_pgd_stages_track_dc_iterates() {
        let (meas, target) = crate::testutil::problem(3, 16, 1.0);
        let spec = NetworkSpec::new(NetKind::Pgd, 4, 1, 4, 0);
        let net = UnrolledNetwork::new(spec).unwrap();
        let mut x = meas.aty.clone();
        let mut expected = Vec::new();
        for _ in 0..4 {
            x = crate::physics::dc_step(&meas.model, &x, &meas.kspace).unwrap();
            expected.push(psnr(&target, &x).unwrap());
        }
        let rows = inference_sweep(&net, &[Sample { meas, target }]).unwrap();
        for (r, e) in rows.iter().zip(&expected) {
            assert!((r.psnr.mean - e).abs() < 1e-9);
        }
    }
}
