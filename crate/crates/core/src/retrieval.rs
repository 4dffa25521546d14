//! TF-IDF nearest-neighbour baseline and embedding-based code similarity:
//! clone removal from the test set and top-k similar-question lookup.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::QcPair;
use crate::numerics::{Scalar, Tensor};
use crate::vocab::Vocabulary;
use crate::{Error, Result};

/// One indexed training document.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: u64,
    pub title: String,
    pub code_tokens: Vec<String>,
}

impl From<&QcPair> for Document {
    fn from(p: &QcPair) -> Self {
        Document {
            id: p.id,
            title: p.title_tokens.join(" "),
            code_tokens: p.code_tokens.clone(),
        }
    }
}

/// `(id, title, sparse weights sorted by term index)`
type IndexedDoc = (u64, String, Vec<(usize, f64)>);

/// TF-IDF vectors with `idf = ln((N + 1) / (df + 1)) + 1`, raw term counts and L2 normalization.
pub struct TfidfIndex {
    terms: HashMap<String, usize>,
    idf: Vec<f64>,
    /// Sorted by id; each vector sorted by term index.
    docs: Vec<IndexedDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum IrResult {
    Match {
        id: u64,
        title: String,
        score: f64,
    },
    /// The query shares no token with the index.
    NoMatch,
}

fn normalize(v: &mut [(usize, f64)]) {
    let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|(_, w)| *w /= norm);
    }
}

impl TfidfIndex {
    pub fn build(docs: &[Document]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidInput("cannot index an empty corpus".into()));
        }
        crate::io::check_unique_ids(docs.iter().map(|d| d.id), "index")?;
        let mut terms = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        let mut counted = Vec::with_capacity(docs.len());
        for d in docs {
            let mut tf: BTreeMap<usize, usize> = BTreeMap::new();
            for tok in &d.code_tokens {
                let next = terms.len();
                let t = *terms.entry(tok.clone()).or_insert(next);
                if t == df.len() {
                    df.push(0);
                }
                *tf.entry(t).or_insert(0) += 1;
            }
            for &t in tf.keys() {
                df[t] += 1;
            }
            counted.push(tf);
        }
        let n = docs.len() as f64;
        let idf: Vec<f64> = df.iter().map(|&d| ((n + 1.0) / (d as f64 + 1.0)).ln() + 1.0).collect();
        let mut out: Vec<IndexedDoc> = docs
            .iter()
            .zip(counted)
            .map(|(d, tf)| {
                let mut v: Vec<(usize, f64)> = tf.into_iter().map(|(t, c)| (t, c as f64 * idf[t])).collect();
                normalize(&mut v);
                (d.id, d.title.clone(), v)
            })
            .collect();
        out.sort_by_key(|d| d.0);
        Ok(TfidfIndex { terms, idf, docs: out })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, f64)> {
        let mut tf: BTreeMap<usize, usize> = BTreeMap::new();
        for tok in tokens {
            if let Some(&t) = self.terms.get(tok.as_ref()) {
                *tf.entry(t).or_insert(0) += 1;
            }
        }
        let mut v: Vec<(usize, f64)> = tf.into_iter().map(|(t, c)| (t, c as f64 * self.idf[t])).collect();
        normalize(&mut v);
        v
    }

    /// Title of the document with the highest cosine similarity, lowest id on ties.
    pub fn query<S: AsRef<str>>(&self, tokens: &[S]) -> IrResult {
        let q = self.vectorize(tokens);
        if q.is_empty() {
            return IrResult::NoMatch;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, _, d)) in self.docs.iter().enumerate() {
            let (mut a, mut b, mut s) = (0, 0, 0.0);
            while a < q.len() && b < d.len() {
                match q[a].0.cmp(&d[b].0) {
                    Ordering::Less => a += 1,
                    Ordering::Greater => b += 1,
                    Ordering::Equal => {
                        s += q[a].1 * d[b].1;
                        a += 1;
                        b += 1;
                    }
                }
            }
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        let (i, score) = best.expect("index is never empty");
        IrResult::Match {
            id: self.docs[i].0,
            title: self.docs[i].1.clone(),
            score,
        }
    }
}

/// Sum of the embedding rows of a snippet's in-vocabulary tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeEmbedding {
    pub vector: Vec<f64>,
    /// No in-vocabulary token contributed, or the sum is exactly zero.
    pub zero: bool,
}

/// Sums embedding rows of in-vocabulary tokens (OOV skipped) and, when
/// `normalize` is set, scales the sum to unit length.
pub fn embed_code<T: Scalar, S: AsRef<str>>(
    tokens: &[S],
    embedding: &Tensor<T>,
    vocab: &Vocabulary,
    normalize: bool,
) -> Result<CodeEmbedding> {
    let (rows, dim) = embedding.matrix_dims();
    if rows != vocab.len() {
        return Err(Error::Shape {
            op: "embed_code",
            left: vec![rows, dim],
            right: vec![vocab.len()],
        });
    }
    let mut v = vec![0.0f64; dim];
    for tok in tokens {
        if let Some(id) = vocab.id(tok.as_ref()) {
            for (acc, x) in v.iter_mut().zip(embedding.row(id)) {
                *acc += x.as_f64();
            }
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let zero = norm == 0.0;
    if normalize && !zero {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(CodeEmbedding { vector: v, zero })
}

/// `1 − ‖e₁ − e₂‖`.
pub fn code_similarity(a: &CodeEmbedding, b: &CodeEmbedding) -> Result<f64> {
    if a.zero || b.zero {
        return Err(Error::ZeroEmbedding);
    }
    if a.vector.len() != b.vector.len() {
        return Err(Error::Shape {
            op: "code_similarity",
            left: vec![a.vector.len()],
            right: vec![b.vector.len()],
        });
    }
    let d = a
        .vector
        .iter()
        .zip(&b.vector)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    Ok(1.0 - d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexedCode {
    pub id: u64,
    pub title: String,
    pub embedding: CodeEmbedding,
}

/// Embeds every pair's code with the model's input embedding matrix.
pub fn embed_corpus<T: Scalar>(
    pairs: &[QcPair],
    embedding: &Tensor<T>,
    vocab: &Vocabulary,
    normalize: bool,
) -> Result<Vec<IndexedCode>> {
    pairs
        .par_iter()
        .map(|p| {
            Ok(IndexedCode {
                id: p.id,
                title: p.title_tokens.join(" "),
                embedding: embed_code(&p.code_tokens, embedding, vocab, normalize)?,
            })
        })
        .collect()
}

/// Bucket labels in report order.
pub const BUCKETS: [&str; 5] = ["[0.0,0.2)", "[0.2,0.4)", "[0.4,0.6)", "[0.6,0.8)", "[0.8,1.0]"];

fn bucket(s: f64) -> usize {
    [0.2, 0.4, 0.6, 0.8].iter().take_while(|&&edge| s >= edge).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    /// Maximum similarity of each scored test snippet; negatives fall in the first bucket.
    pub buckets: BTreeMap<String, usize>,
    pub removed: usize,
    pub kept: usize,
    pub delta: f64,
    /// Test snippets with no in-vocabulary token, or no scorable training snippet; always kept.
    pub unscored: usize,
}

pub struct DedupOutcome {
    /// Indices into the test set, in input order.
    pub kept: Vec<usize>,
    /// `(test index, max similarity, id of the closest training snippet)`.
    pub removed: Vec<(usize, f64, u64)>,
    pub max_similarity: Vec<Option<f64>>,
    pub report: DedupReport,
}

/// Removes every test snippet whose maximum similarity to a training snippet is at least `delta`.
pub fn dedup_testset(train: &[IndexedCode], test: &[IndexedCode], delta: f64) -> Result<DedupOutcome> {
    let lowest = 1.0 - 2f64.sqrt();
    if !(delta > lowest && delta <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "delta must lie in (1 - sqrt 2, 1], got {delta}"
        )));
    }
    let nearest: Vec<Option<(f64, u64)>> = test
        .par_iter()
        .map(|t| {
            if t.embedding.zero {
                return None;
            }
            train
                .iter()
                .filter(|c| !c.embedding.zero)
                .filter_map(|c| code_similarity(&t.embedding, &c.embedding).ok().map(|s| (s, c.id)))
                .fold(None, |best: Option<(f64, u64)>, (s, id)| match best {
                    Some((bs, bid)) if bs > s || (bs == s && bid <= id) => Some((bs, bid)),
                    _ => Some((s, id)),
                })
        })
        .collect();
    let mut counts = [0usize; 5];
    let (mut kept, mut removed, mut unscored) = (Vec::new(), Vec::new(), 0);
    for (i, n) in nearest.iter().enumerate() {
        match *n {
            Some((s, id)) => {
                counts[bucket(s)] += 1;
                if s >= delta {
                    removed.push((i, s, id));
                } else {
                    kept.push(i);
                }
            }
            None => {
                unscored += 1;
                kept.push(i);
            }
        }
    }
    let report = DedupReport {
        buckets: BUCKETS.iter().map(|b| b.to_string()).zip(counts).collect(),
        removed: removed.len(),
        kept: kept.len(),
        delta,
        unscored,
    };
    Ok(DedupOutcome {
        kept,
        removed,
        max_similarity: nearest.iter().map(|n| n.map(|(s, _)| s)).collect(),
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similar {
    pub id: u64,
    pub title: String,
    pub similarity: f64,
}

/// The `k` corpus entries most similar to `query`, most similar first, lowest id on ties.
pub fn topk_similar(query: &CodeEmbedding, corpus: &[IndexedCode], k: usize) -> Result<Vec<Similar>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if query.zero {
        return Err(Error::ZeroEmbedding);
    }
    let mut scored: Vec<Similar> = corpus
        .iter()
        .filter(|c| !c.embedding.zero)
        .map(|c| {
            Ok(Similar {
                id: c.id,
                title: c.title.clone(),
                similarity: code_similarity(query, &c.embedding)?,
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_vocab;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn doc(id: u64, code: &str, title: &str) -> Document {
        Document {
            id,
            title: title.into(),
            code_tokens: t(code),
        }
    }

    fn emb(v: &[f64]) -> CodeEmbedding {
        CodeEmbedding {
            vector: v.to_vec(),
            zero: v.iter().all(|&x| x == 0.0),
        }
    }

    #[test]
    fn ir_examples() {
        let idx = TfidfIndex::build(&[doc(1, "a b", "first"), doc(2, "c d", "second")]).unwrap();
        // cos(q, d1) = w_a / |d1| > 0, cos(q, d2) = 0
        match idx.query(&t("a")) {
            IrResult::Match { id, title, score } => {
                assert_eq!((id, title.as_str()), (1, "first"));
                assert_abs_diff_eq!(score, 1.0 / 2f64.sqrt(), epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(idx.query(&t("zzz")), IrResult::NoMatch);
        match idx.query(&t("c d")) {
            IrResult::Match { id, score, .. } => {
                assert_eq!(id, 2);
                assert_abs_diff_eq!(score, 1.0, epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let tie = TfidfIndex::build(&[doc(9, "x", "nine"), doc(4, "x", "four")]).unwrap();
        assert!(matches!(tie.query(&t("x")), IrResult::Match { id: 4, .. }));
        let json = serde_json::to_string(&IrResult::NoMatch).unwrap();
        assert_eq!(json, r#"{"result":"no-match"}"#);
    }

    #[test]
    fn idf_formula() {
        let idx = TfidfIndex::build(&[doc(1, "a b", ""), doc(2, "a", ""), doc(3, "c", "")]).unwrap();
        let a = idx.terms["a"];
        let b = idx.terms["b"];
        assert_abs_diff_eq!(idx.idf[a], (4.0f64 / 3.0).ln() + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(idx.idf[b], 2f64.ln() + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn embedding_examples() {
        let vocab = build_vocab([t("a b").as_slice()], 0, None);
        let mut table = Tensor::<f32>::zeros(&[vocab.len(), 2]);
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();
        table.data_mut()[2 * a..2 * a + 2].copy_from_slice(&[3.0, 4.0]);
        table.data_mut()[2 * b..2 * b + 2].copy_from_slice(&[0.0, 1.0]);
        let one = embed_code(&t("a"), &table, &vocab, true).unwrap();
        assert_eq!(one.vector, vec![0.6, 0.8]);
        let two = embed_code(&t("a a zzz"), &table, &vocab, true).unwrap();
        assert_eq!(two.vector, one.vector);
        assert_eq!(code_similarity(&one, &two).unwrap(), 1.0);
        let raw = embed_code(&t("a a"), &table, &vocab, false).unwrap();
        assert_eq!(raw.vector, vec![6.0, 8.0]);
        let none = embed_code(&t("zzz qqq"), &table, &vocab, true).unwrap();
        assert!(none.zero);
        assert!(matches!(code_similarity(&none, &one), Err(Error::ZeroEmbedding)));
    }

    #[test]
    fn similarity_extremes() {
        let s = code_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(s, 1.0 - 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s, -0.4142, epsilon = 1e-4);
        assert_eq!(code_similarity(&emb(&[1.0, 0.0]), &emb(&[-1.0, 0.0])).unwrap(), -1.0);
    }

    fn item(id: u64, v: &[f64]) -> IndexedCode {
        IndexedCode {
            id,
            title: format!("t{id}"),
            embedding: emb(v),
        }
    }

    #[test]
    fn dedup_examples() {
        let train = vec![item(1, &[1.0, 0.0]), item(2, &[0.0, 1.0])];
        let near = (0.99f64, (1.0 - 0.99f64 * 0.99).sqrt());
        let test = vec![
            item(10, &[1.0, 0.0]),
            item(11, &[-0.6, -0.8]),
            item(12, &[near.0, near.1]),
            item(13, &[0.0, 0.0]),
        ];
        let out = dedup_testset(&train, &test, 0.8).unwrap();
        assert_eq!(
            out.removed.iter().map(|r| (r.0, r.2)).collect::<Vec<_>>(),
            vec![(0, 1), (2, 1)]
        );
        assert_eq!(out.kept, vec![1, 3]);
        assert_eq!(out.report.unscored, 1);
        assert_eq!(out.report.buckets["[0.0,0.2)"], 1);
        assert_eq!(out.report.buckets["[0.8,1.0]"], 2);
        assert_eq!(
            out.report.buckets.values().sum::<usize>() + out.report.unscored,
            test.len()
        );

        // s < 1.0 survives delta 1.0
        let s = out.max_similarity[2].unwrap();
        assert!(s < 1.0 && s > 0.85);
        let strict = dedup_testset(&train, &test, 1.0).unwrap();
        assert_eq!(strict.kept, vec![1, 2, 3]);

        let empty = dedup_testset(&[], &test, 0.8).unwrap();
        assert_eq!(empty.kept.len(), 4);
        assert_eq!(empty.report.buckets.values().sum::<usize>(), 0);
        assert!(dedup_testset(&train, &test, -0.5).is_err());

        let json = serde_json::to_value(&out.report).unwrap();
        assert_eq!(json["delta"], 0.8);
        assert_eq!(json["buckets"].as_object().unwrap().len(), 5);
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(bucket(-0.3), 0);
        assert_eq!(bucket(0.0), 0);
        assert_eq!(bucket(0.2), 1);
        assert_eq!(bucket(0.6), 3);
        assert_eq!(bucket(0.7999), 3);
        assert_eq!(bucket(1.0), 4);
    }

    #[test]
    fn topk_examples() {
        // distances from q = (1, 0): d1 = 0.2, d2 = sqrt 2, d3 = sqrt(0.4)
        let q = emb(&[1.0, 0.0]);
        let corpus = vec![
            item(3, &[0.8, 0.6]),
            item(2, &[0.0, 1.0]),
            item(1, &[0.98, 0.198997487421324]),
        ];
        let out = topk_similar(&q, &corpus, 3).unwrap();
        assert_eq!(out.iter().map(|s| s.id).collect::<Vec<_>>(), vec![1, 3, 2]);
        let d1 = ((1.0f64 - 0.98).powi(2) + 0.198997487421324f64.powi(2)).sqrt();
        assert_abs_diff_eq!(out[0].similarity, 1.0 - d1, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1].similarity, 1.0 - 0.4f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[2].similarity, 1.0 - 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(topk_similar(&q, &corpus, 10).unwrap().len(), 3);
        let own = topk_similar(&corpus[1].embedding, &corpus, 1).unwrap();
        assert_eq!((own[0].id, own[0].similarity), (2, 1.0));
    }

    fn unit() -> impl Strategy<Value = CodeEmbedding> {
        proptest::collection::vec(-1.0f64..1.0, 3).prop_filter_map("nonzero", |v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (n > 1e-3).then(|| emb(&v.iter().map(|x| x / n).collect::<Vec<_>>()))
        })
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric(a in unit(), b in unit()) {
            let s = code_similarity(&a, &b).unwrap();
            prop_assert_eq!(s, code_similarity(&b, &a).unwrap());
            prop_assert!((-1.0 - 1e-12..=1.0).contains(&s));
            prop_assert_eq!(s == 1.0, a.vector == b.vector);
        }

        #[test]
        fn dedup_partitions_the_test_set(tr in proptest::collection::vec(unit(), 0..6),
                                         te in proptest::collection::vec(unit(), 0..8),
                                         delta in -0.4f64..1.0) {
            let train: Vec<_> = tr.into_iter().enumerate().map(|(i, e)| IndexedCode { id: i as u64, title: String::new(), embedding: e }).collect();
            let test: Vec<_> = te.into_iter().enumerate().map(|(i, e)| IndexedCode { id: i as u64, title: String::new(), embedding: e }).collect();
            let out = dedup_testset(&train, &test, delta).unwrap();
            let mut all: Vec<usize> = out.kept.clone();
            all.extend(out.removed.iter().map(|r| r.0));
            all.sort();
            prop_assert_eq!(all, (0..test.len()).collect::<Vec<_>>());
            prop_assert_eq!(out.report.kept + out.report.removed, test.len());
        }

        #[test]
        fn ir_ignores_query_order(mut q in proptest::collection::vec(prop_oneof!["a", "b", "c", "d", "e"], 1..6), seed in any::<u64>()) {
            let idx = TfidfIndex::build(&[doc(1, "a b b", "x"), doc(2, "c d a", "y"), doc(3, "e e a", "z")]).unwrap();
            let before = idx.query(&q);
            crate::numerics::Rng::new(seed).shuffle(&mut q);
            prop_assert_eq!(before, idx.query(&q));
        }
    }
}
