//! Top-k questions whose code is most similar to a query snippet.

use code2title::corpus::{self, tokenize_code, Lang, RawPost};
use code2title::io::parse_jsonl;
use code2title::numerics::{Rng, Tensor};
use code2title::retrieval::{embed_code, embed_corpus, topk_similar};
use code2title::vocab::build_vocab;

fn main() -> code2title::Result<()> {
    let posts: Vec<RawPost> = parse_jsonl(include_str!("../data/sample_posts.jsonl"), "sample_posts.jsonl")?;
    let (candidates, _) = corpus::extract_pairs(&posts, 1);
    let (pairs, _) = corpus::filter_pairs(corpus::tokenize_candidates(&candidates).0);
    let vocab = build_vocab(
        pairs
            .iter()
            .flat_map(|p| [p.code_tokens.as_slice(), p.title_tokens.as_slice()]),
        0,
        None,
    );
    let table: Tensor<f32> = Tensor::uniform(&[vocab.len(), 32], -0.1, 0.1, &mut Rng::new(9));
    let index = embed_corpus(&pairs, &table, &vocab, true)?;

    let query = "with open(path) as f:\n    for line in f:\n        print(line.strip())";
    let tokens = tokenize_code(query, Lang::Python).tokens;
    println!("query: {}", tokens.join(" "));
    let q = embed_code(&tokens, &table, &vocab, true)?;
    for hit in topk_similar(&q, &index, 3)? {
        println!("{:.4}  #{:<6} {}", hit.similarity, hit.id, hit.title);
    }
    Ok(())
}
