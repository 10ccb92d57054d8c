//! The numeric core on its own: record a small computation on the tape,
//! backpropagate, verify one gradient against central finite differences,
//! and take a few Adam steps.
//!
//!     cargo run --release --example autodiff

use rcn::param::{AdamConfig, ParamStore};
use rcn::tape::Tape;
use rcn::tensor::Tensor;

fn main() -> anyhow::Result<()> {
    let mut store = ParamStore::new();
    let w = store.register(
        "w",
        Tensor::new(vec![2, 3], vec![0.2, -0.4, 0.7, 0.1, 0.5, -0.3])?,
    );
    let x = store.register("x", Tensor::vector(vec![0.9, -0.2, 0.4]));
    let b = store.register("b", Tensor::vector(vec![0.05, -0.1]));

    // loss = || tanh(W x + b) ||^2
    let loss_of = |store: &ParamStore| -> anyhow::Result<(Tape, usize)> {
        let mut tape = Tape::new();
        let wn = tape.param(store, w);
        let xn = tape.param(store, x);
        let bn = tape.param(store, b);
        let h = tape.affine(wn, xn, bn)?;
        let t = tape.tanh(h);
        let loss = tape.sq_norm(t);
        Ok((tape, loss))
    };

    let (tape, loss) = loss_of(&store)?;
    println!("loss = {:.6}", tape.value(loss)[0]);
    tape.backward(loss, &mut store)?;
    println!("dL/db = {:?}", store.gradient(b).data());

    // Check dL/dw[0] against (L(w+e) - L(w-e)) / 2e.
    let analytic = store.gradient(w).data()[0];
    let eps = 1e-5;
    let orig = store.value(w).data()[0];
    store.value_mut(w).data_mut()[0] = orig + eps;
    let up = {
        let (t, l) = loss_of(&store)?;
        t.value(l)[0]
    };
    store.value_mut(w).data_mut()[0] = orig - eps;
    let down = {
        let (t, l) = loss_of(&store)?;
        t.value(l)[0]
    };
    store.value_mut(w).data_mut()[0] = orig;
    let numeric = (up - down) / (2.0 * eps);
    println!("dL/dw[0]: analytic {analytic:.10}, finite differences {numeric:.10}");

    // A few Adam steps shrink the loss.
    for step in 1..=5 {
        let (tape, loss) = loss_of(&store)?;
        store.zero_grad();
        tape.backward(loss, &mut store)?;
        store.adam_step(&AdamConfig::default());
        println!("after step {step}: loss = {:.6}", tape.value(loss)[0]);
    }
    Ok(())
}
