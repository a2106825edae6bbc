use icpe::eval::gradsuite::{grad_check_suite, Scope};
use icpe_tensor::gradcheck::{check_gradients, GradCheckConfig};
use icpe_tensor::{ops, Tensor};

#[test]
fn every_scope_passes() {
    let reports = grad_check_suite(&Scope::ALL).unwrap();
    let mut failed = Vec::new();
    for r in &reports {
        println!("{r}");
        if !r.passed() {
            failed.push(r.name.clone());
        }
        assert!(r.checked > 0, "{} checked nothing", r.name);
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
    assert!(reports.iter().any(|r| r.name == "episode_loss[full]"));
}

/// A backward pass that is off by a factor of two must be caught.
#[test]
fn corrupted_gradient_is_detected() {
    let x = Tensor::param(vec![0.3, -0.8, 1.2], &[3]).unwrap();
    let double_backward = |x: &Tensor| -> icpe_tensor::Result<Tensor> {
        let xs = x.to_vec();
        let y = xs.iter().map(|v| v * v).collect();
        Ok(Tensor::from_op(y, x.shape(), "bad_square", vec![x.clone()], || {
            Box::new(move |g| vec![Some(g.iter().zip(&xs).map(|(g, v)| 4.0 * g * v).collect())])
        }))
    };
    let r = check_gradients("bad_square", &[x.clone()], || Ok(ops::sum(&double_backward(&x)?)), GradCheckConfig::default())
        .unwrap();
    assert_eq!(r.failures.len(), 3, "{r}");
}
