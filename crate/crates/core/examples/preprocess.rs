//! Mine `<code, title>` pairs from the bundled post sample, tokenize, filter and split them.

use code2title::corpus::{self, RawPost, SplitSpec};
use code2title::io::parse_jsonl;

fn main() -> code2title::Result<()> {
    let posts: Vec<RawPost> = parse_jsonl(include_str!("../data/sample_posts.jsonl"), "sample_posts.jsonl")?;
    let (candidates, skipped) = corpus::extract_pairs(&posts, 1);
    println!(
        "{} posts -> {} candidates, skipped {skipped:?}",
        posts.len(),
        candidates.len()
    );

    let (pairs, warnings) = corpus::tokenize_candidates(&candidates);
    for (id, w) in &warnings {
        println!("post {id} line {}: {}", w.line, w.message);
    }
    let (pairs, filter) = corpus::filter_pairs(pairs);
    println!("filter: {filter:?}");

    let splits = corpus::split_dataset(
        pairs,
        SplitSpec {
            val_count: 20,
            test_count: 20,
            seed: 1,
        },
    )?;
    println!(
        "train {} / val {} / test {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let p = &splits.test[0];
    println!("\nexample test pair {} ({}):", p.id, p.lang);
    println!("  title: {}", p.title_tokens.join(" "));
    println!("  code:  {}", p.code_tokens.join(" "));
    Ok(())
}
