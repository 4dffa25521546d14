//! Trains every mechanism combination on a task that needs copying, and shows how
//! the copy-less variants fall back to UNK replacement through attention.

use code2title::decode::{generate, DecodeOptions};
use code2title::model::{Ablation, EncodedExample, Hyperparams, Parameters};
use code2title::numerics::Rng;
use code2title::train::{token_nll, train, TrainConfig};
use code2title::vocab::build_vocab;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn pair(rng: &mut impl rand::Rng, name: &str) -> (Vec<String>, Vec<String>) {
    let filler = ["a", "b", "=", "(", ")", ":", "if", "for"];
    let mut code: Vec<String> = (0..6).map(|_| filler.choose(rng).unwrap().to_string()).collect();
    code.insert(rng.gen_range(0..=6), name.to_string());
    let title = format!("how to reset {name} in python")
        .split(' ')
        .map(String::from)
        .collect();
    (code, title)
}

fn main() -> code2title::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let data: Vec<_> = (0..150).map(|i| pair(&mut rng, &format!("cfg{i}"))).collect();
    let vocab = build_vocab(data.iter().flat_map(|(c, t)| [c.as_slice(), t.as_slice()]), 2, None);
    let examples: Vec<EncodedExample> = data
        .iter()
        .enumerate()
        .map(|(i, (c, t))| EncodedExample::new(i as u64, c, t, &vocab))
        .collect();
    let (probe, _) = pair(&mut rng, "session_cache");
    println!("probe: {}\n", probe.join(" "));

    for ablation in Ablation::ALL {
        let hyper = Hyperparams {
            embed_dim: 24,
            hidden: 24,
            init_range: 0.3,
            ablation,
            ..Hyperparams::new(vocab.len())
        };
        let init: Parameters<f32> = Parameters::init(&hyper, &mut Rng::new(3))?;
        let config = TrainConfig {
            lr: 0.5,
            batch_size: 4,
            epochs: usize::MAX,
            max_steps: Some(400),
            ..Default::default()
        };
        let params = train(init, &hyper, &config, &examples, &[], None, |_| {})?.params;
        let nll = token_nll(&params, &hyper, &examples)?;
        let title = generate(&params, &hyper, &vocab, &probe, DecodeOptions::beam(5, 16))?.tokens;
        println!("{:<15} train NLL {nll:.3}   {}", ablation.name(), title.join(" "));
    }
    Ok(())
}
