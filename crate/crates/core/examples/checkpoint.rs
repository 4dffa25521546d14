//! Binary checkpoint round trip and the errors raised for damaged or mismatched files.

use code2title::model::{Hyperparams, Parameters};
use code2title::numerics::{Real, Rng};
use code2title::train::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint};
use code2title::vocab::build_vocab;

fn main() -> code2title::Result<()> {
    let tokens: Vec<String> = "def return for in if print".split(' ').map(String::from).collect();
    let vocab = build_vocab([tokens.as_slice()], 0, None);
    let hyper = Hyperparams {
        embed_dim: 16,
        hidden: 16,
        ..Hyperparams::new(vocab.len())
    };
    let params: Parameters<Real> = Parameters::init(&hyper, &mut Rng::new(1))?;

    let path = std::env::temp_dir().join("code2title-example.ckpt");
    save_checkpoint(&params, &hyper, &vocab.hash(), &path)?;
    let loaded = load_checkpoint(&path, Some(&vocab.hash()))?;
    println!(
        "{} tensors, {} scalars, {} bytes; identical after reload: {}",
        params.names().len(),
        params.num_scalars(),
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        loaded.params == params && loaded.hyper == hyper
    );

    let bytes = checkpoint_bytes(&params, &hyper, &vocab.hash())?;
    let attempts: [(&str, Vec<u8>, Option<&str>); 3] = [
        ("truncated", bytes[..bytes.len() - 7].to_vec(), None),
        ("bad magic", [b"XXXX", &bytes[4..]].concat(), None),
        ("other vocabulary", bytes.clone(), Some("0000")),
    ];
    for (what, data, hash) in attempts {
        match parse_checkpoint(&data, hash) {
            Ok(_) => println!("{what}: accepted"),
            Err(e) => println!("{what}: {} ({e})", e.code()),
        }
    }
    let _ = std::fs::remove_file(path);
    Ok(())
}
