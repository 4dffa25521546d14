//! Overfits the full model on 32 sample pairs, then checks greedy decodes against the titles.

use code2title::corpus::{self, RawPost};
use code2title::decode::{generate, DecodeOptions};
use code2title::io::parse_jsonl;
use code2title::model::{EncodedExample, Hyperparams, Parameters};
use code2title::numerics::Rng;
use code2title::train::{token_nll, train, TrainConfig};
use code2title::vocab::build_vocab;

fn main() -> code2title::Result<()> {
    let posts: Vec<RawPost> = parse_jsonl(include_str!("../data/sample_posts.jsonl"), "sample_posts.jsonl")?;
    let (candidates, _) = corpus::extract_pairs(&posts, 1);
    let (pairs, _) = corpus::filter_pairs(corpus::tokenize_candidates(&candidates).0);
    let pairs = &pairs[..32];
    let vocab = build_vocab(
        pairs
            .iter()
            .flat_map(|p| [p.code_tokens.as_slice(), p.title_tokens.as_slice()]),
        0,
        None,
    );
    let examples: Vec<EncodedExample> = pairs.iter().map(|p| EncodedExample::from_pair(p, &vocab)).collect();

    let hyper = Hyperparams {
        embed_dim: 64,
        hidden: 64,
        init_range: 0.3,
        ..Hyperparams::new(vocab.len())
    };
    let init: Parameters<f32> = Parameters::init(&hyper, &mut Rng::new(1))?;
    let config = TrainConfig {
        lr: 0.5,
        batch_size: 4,
        epochs: usize::MAX,
        max_steps: Some(1000),
        log_every: 100,
        ..Default::default()
    };
    let outcome = train(init, &hyper, &config, &examples, &[], None, |e| {
        println!("step {:>4}  epoch {:>3}  loss {:.4}", e.step, e.epoch, e.train_loss);
    })?;
    let params = outcome.params;
    println!("per-token NLL {:.4}", token_nll(&params, &hyper, &examples)?);

    let opts = DecodeOptions {
        beam: 1,
        greedy: true,
        max_len: 16,
    };
    let mut exact = 0;
    for p in pairs {
        let got = generate(&params, &hyper, &vocab, &p.code_tokens, opts)?.tokens;
        exact += usize::from(got == p.title_tokens);
    }
    println!("greedy reproduces {exact}/{} titles exactly", pairs.len());
    Ok(())
}
