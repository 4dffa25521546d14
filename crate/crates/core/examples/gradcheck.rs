//! Compares the model's analytic gradient with central finite differences.

use code2title::model::{loss_and_grad, sequence_loss, EncodedExample, Hyperparams, Parameters};
use code2title::numerics::{finite_diff_check, Rng, Tape};
use code2title::vocab::build_vocab;

fn main() -> code2title::Result<()> {
    let tokens: Vec<String> = (0..16).map(|i| format!("t{i}")).collect();
    let vocab = build_vocab([tokens.as_slice()], 0, None);
    let hyper = Hyperparams {
        embed_dim: 8,
        hidden: 8,
        init_range: 0.5,
        ..Hyperparams::new(vocab.len())
    };
    let split = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let example = EncodedExample::new(0, &split("t1 rare t3 t5"), &split("t2 rare"), &vocab);

    let mut params: Parameters<f64> = Parameters::init(&hyper, &mut Rng::new(3))?;
    let mut grads = params.zeros_like();
    loss_and_grad(&params, &hyper, &example, &mut grads, 1.0)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();

    let point = params.flatten();
    let report = finite_diff_check(&point, &analytic, 1e-5, 1e-6, |x| {
        params.assign_flat(x)?;
        let mut tape = Tape::new(params.tensors());
        let rec = sequence_loss(&mut tape, &params, &hyper, &example)?;
        Ok(tape.scalar(rec.loss))
    })?;
    println!(
        "{} parameters checked, worst relative error {:.2e} at coordinate {} (analytic {:.6e}, numeric {:.6e})",
        report.checked, report.max_rel_error, report.worst_index, report.analytic_at_worst, report.numeric_at_worst
    );
    Ok(())
}
