//! Trains a small model on a synthetic task whose titles name a rare identifier
//! from the snippet, then decodes unseen snippets with beam search and greedy search.

use code2title::decode::{beam_search, generate, DecodeOptions};
use code2title::model::{Ablation, Decoder, EncodedExample, Hyperparams, Parameters};
use code2title::numerics::Rng;
use code2title::train::{train, TrainConfig};
use code2title::vocab::{build_vocab, decode_ids, encode_source};
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn snippet(rng: &mut impl rand::Rng, name: &str) -> (Vec<String>, Vec<String>) {
    let words = ["x", "y", "=", "(", ")", "for", "in", "if", "return", "len"];
    let verb = ["sort", "copy", "parse"][rng.gen_range(0..3)];
    let mut code: Vec<String> = (0..rng.gen_range(5..9))
        .map(|_| words.choose(rng).unwrap().to_string())
        .collect();
    let at = rng.gen_range(0..=code.len());
    code.insert(at, name.to_string());
    code.insert(0, verb.to_string());
    let title = format!("how to {verb} {name} in python")
        .split(' ')
        .map(String::from)
        .collect();
    (code, title)
}

fn main() -> code2title::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let data: Vec<_> = (0..200).map(|i| snippet(&mut rng, &format!("my_list_{i}"))).collect();
    let vocab = build_vocab(data.iter().flat_map(|(c, t)| [c.as_slice(), t.as_slice()]), 2, None);
    let examples: Vec<EncodedExample> = data
        .iter()
        .enumerate()
        .map(|(i, (c, t))| EncodedExample::new(i as u64, c, t, &vocab))
        .collect();

    let hyper = Hyperparams {
        embed_dim: 32,
        hidden: 32,
        init_range: 0.3,
        ablation: Ablation::FULL,
        ..Hyperparams::new(vocab.len())
    };
    let init: Parameters<f32> = Parameters::init(&hyper, &mut Rng::new(5))?;
    let config = TrainConfig {
        lr: 0.5,
        batch_size: 4,
        epochs: usize::MAX,
        max_steps: Some(600),
        ..Default::default()
    };
    let params = train(init, &hyper, &config, &examples, &[], None, |_| {})?.params;

    for name in ["customerRecords", "tmp_buf"] {
        let (code, _) = snippet(&mut rng, name);
        println!("code: {}", code.join(" "));
        let source = encode_source(&code, &vocab);
        let mut dec = Decoder::new(&params, &hyper, &source)?;
        for hyp in beam_search(&mut dec, 4, 16)?.iter().take(3) {
            let words = decode_ids(&hyp.tokens, &vocab, &source.ext)?;
            println!("  beam   {:>7.3}  {}", hyp.score, words.join(" "));
        }
        let opts = DecodeOptions {
            greedy: true,
            ..DecodeOptions::beam(1, 16)
        };
        println!(
            "  greedy          {}",
            generate(&params, &hyper, &vocab, &code, opts)?.tokens.join(" ")
        );
    }
    Ok(())
}
