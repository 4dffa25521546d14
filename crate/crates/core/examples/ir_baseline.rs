//! TF-IDF nearest-neighbour baseline: each test snippet borrows the title of its closest training snippet.

use code2title::corpus::{self, RawPost, SplitSpec};
use code2title::io::parse_jsonl;
use code2title::metrics::score;
use code2title::retrieval::{Document, IrResult, TfidfIndex};

fn main() -> code2title::Result<()> {
    let posts: Vec<RawPost> = parse_jsonl(include_str!("../data/sample_posts.jsonl"), "sample_posts.jsonl")?;
    let (candidates, _) = corpus::extract_pairs(&posts, 1);
    let (pairs, _) = corpus::filter_pairs(corpus::tokenize_candidates(&candidates).0);
    let spec = SplitSpec {
        val_count: 0,
        test_count: 20,
        seed: 1,
    };
    let splits = corpus::split_dataset(pairs, spec)?;

    let docs: Vec<Document> = splits.train.iter().map(Document::from).collect();
    let index = TfidfIndex::build(&docs)?;
    let mut predicted = Vec::new();
    for p in &splits.test {
        let title = match index.query(&p.code_tokens) {
            IrResult::Match { title, score, .. } => {
                println!("{score:.3}  {:<60} <- {}", title, p.title_tokens.join(" "));
                title.split(' ').map(String::from).collect()
            }
            IrResult::NoMatch => Vec::new(),
        };
        predicted.push(title);
    }
    let references: Vec<Vec<String>> = splits.test.iter().map(|p| p.title_tokens.clone()).collect();
    let report = score(&predicted, &references)?;
    println!(
        "BLEU-4 {:.3}  ROUGE-1 {:.3}  ROUGE-L {:.3}",
        report.bleu4, report.rouge1.f, report.rouge_l.f
    );
    Ok(())
}
