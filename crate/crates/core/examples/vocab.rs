//! Frequency-thresholded vocabulary and per-example extended vocabularies.

use code2title::corpus::{self, RawPost};
use code2title::io::parse_jsonl;
use code2title::vocab::{build_vocab, decode_ids, encode_source, encode_target, Vocabulary};

fn main() -> code2title::Result<()> {
    let posts: Vec<RawPost> = parse_jsonl(include_str!("../data/sample_posts.jsonl"), "sample_posts.jsonl")?;
    let (candidates, _) = corpus::extract_pairs(&posts, 1);
    let (pairs, _) = corpus::filter_pairs(corpus::tokenize_candidates(&candidates).0);
    let streams = || {
        pairs
            .iter()
            .flat_map(|p| [p.code_tokens.as_slice(), p.title_tokens.as_slice()])
    };

    for threshold in [0, 1, 5, 100] {
        println!(
            "threshold {threshold:>3}: {} entries",
            build_vocab(streams(), threshold, None).len()
        );
    }
    let vocab = build_vocab(streams(), 1, Some(100));
    println!("capped at 100: {} entries, hash {}", vocab.len(), &vocab.hash()[..16]);
    let reloaded = Vocabulary::from_file_string(&vocab.to_file_string())?;
    assert_eq!(reloaded, vocab);

    let code: Vec<String> = "x = setUpClass ( frobnicate )".split(' ').map(String::from).collect();
    let title: Vec<String> = "how to call setUpClass".split(' ').map(String::from).collect();
    let source = encode_source(&code, &vocab);
    let target = encode_target(&title, &vocab, &source.ext);
    println!("\nsource base ids     {:?}", source.base_ids);
    println!("source extended ids {:?}", source.extended_ids);
    println!("out-of-vocabulary   {:?}", source.ext.oov_tokens());
    println!("target ids          {target:?}");
    println!("decoded target      {:?}", decode_ids(&target, &vocab, &source.ext)?);
    Ok(())
}
