//! Clone removal: drops test snippets whose embedding-sum similarity to a training snippet reaches delta.

use code2title::corpus::{self, RawPost, SplitSpec};
use code2title::io::parse_jsonl;
use code2title::numerics::{Rng, Tensor};
use code2title::retrieval::{dedup_testset, embed_corpus};
use code2title::vocab::build_vocab;

fn main() -> code2title::Result<()> {
    let posts: Vec<RawPost> = parse_jsonl(include_str!("../data/sample_posts.jsonl"), "sample_posts.jsonl")?;
    let (candidates, _) = corpus::extract_pairs(&posts, 1);
    let (pairs, _) = corpus::filter_pairs(corpus::tokenize_candidates(&candidates).0);
    let spec = SplitSpec {
        val_count: 0,
        test_count: 40,
        seed: 3,
    };
    let mut splits = corpus::split_dataset(pairs, spec)?;
    // plant an exact clone of a training snippet in the test set
    let mut clone = splits.train[5].clone();
    clone.id = 1_000_000;
    splits.test.push(clone);

    let vocab = build_vocab(
        splits
            .train
            .iter()
            .flat_map(|p| [p.code_tokens.as_slice(), p.title_tokens.as_slice()]),
        0,
        None,
    );
    // a trained model's embedding matrix would normally go here
    let table: Tensor<f32> = Tensor::uniform(&[vocab.len(), 32], -0.1, 0.1, &mut Rng::new(9));
    let train = embed_corpus(&splits.train, &table, &vocab, true)?;
    let test = embed_corpus(&splits.test, &table, &vocab, true)?;

    let out = dedup_testset(&train, &test, 0.8)?;
    for &(i, s, train_id) in &out.removed {
        println!(
            "removed test pair {} (similarity {s:.4} to training pair {train_id})",
            splits.test[i].id
        );
    }
    println!("{}", serde_json::to_string_pretty(&out.report)?);
    Ok(())
}
