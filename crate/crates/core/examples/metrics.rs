//! Corpus BLEU-1..4 and ROUGE-1/2/L on a handful of candidate titles.

use code2title::metrics::{bleu, rouge_l, score, sentence_bleu};

fn main() -> code2title::Result<()> {
    let split = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let references: Vec<Vec<String>> = [
        "how to sort a list in python",
        "what is the difference between list and tuple",
        "how to read a file line by line",
    ]
    .map(split)
    .to_vec();
    let candidates: Vec<Vec<String>> = [
        "how to sort list in python",
        "difference between list and tuple",
        "how to read file in python",
    ]
    .map(split)
    .to_vec();

    println!(
        "BLEU-1 'the cat' vs 'the cat sat': {:.4}",
        bleu(&[split("the cat")], &[split("the cat sat")], 1)?
    );
    println!(
        "ROUGE-L 'a b c d' vs 'a c b d':    {:?}",
        rouge_l(&[split("a b c d")], &[split("a c b d")])?
    );
    for (c, r) in candidates.iter().zip(&references) {
        println!(
            "smoothed sentence BLEU-4 {:.3}  {}",
            sentence_bleu(c, r, 4),
            c.join(" ")
        );
    }
    let report = score(&candidates, &references)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
