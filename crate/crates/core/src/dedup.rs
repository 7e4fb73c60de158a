//! MinHash signatures with banded LSH for near-duplicate removal.
//!
//! Documents are shingled, signed with `num_perm` seeded 64-bit hashes, and
//! bucketed per band. Candidate pairs are verified against the estimated
//! Jaccard similarity, clustered with union-find, and every cluster keeps a
//! single representative.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::corpus::Document;
use crate::text::{mix64, shingles_by_char, stable_hash};

pub const DEFAULT_NUM_PERM: usize = 128;
pub const DEFAULT_BANDS: usize = 16;
pub const DEFAULT_ROWS: usize = 8;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_SEED: u64 = 42;
const CACHE_MAGIC: &[u8] = b"PFMH1";
const SHINGLE_HASH_SEED: u64 = 0x51_6e_91_e5;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("cannot sign an empty shingle set")]
    EmptyShingles,
    #[error("signatures differ in num_perm or seed")]
    SignatureMismatch,
    #[error("bands * rows = {product} but num_perm = {num_perm}")]
    BandMismatch { product: usize, num_perm: usize },
    #[error("shingle width must be at least 1")]
    ZeroWidth,
    #[error("num_perm must be at least 1")]
    ZeroPerm,
    #[error("jaccard threshold {0} outside (0, 1]")]
    Threshold(f64),
    #[error("signature cache: {0}")]
    Cache(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShingleMode {
    Char,
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShingleConfig {
    pub k: usize,
    pub mode: ShingleMode,
}

impl ShingleConfig {
    /// Char 5-shingles for zh/ja/ko/th, token 3-shingles otherwise.
    pub fn for_lang(lang: &str) -> Self {
        if shingles_by_char(lang) {
            ShingleConfig { k: 5, mode: ShingleMode::Char }
        } else {
            ShingleConfig { k: 3, mode: ShingleMode::Token }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    /// Sorted, no duplicates.
    hashes: Vec<u64>,
    pub k: usize,
}

impl ShingleSet {
    pub fn hashes(&self) -> &[u64] {
        &self.hashes
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    /// Builds a set from arbitrary hashes; duplicates collapse.
    pub fn from_hashes(mut hashes: Vec<u64>, k: usize) -> Self {
        hashes.sort_unstable();
        hashes.dedup();
        ShingleSet { hashes, k }
    }

    /// Exact Jaccard similarity of two sets. Two empty sets give 1.0.
    pub fn jaccard(&self, other: &ShingleSet) -> f64 {
        let (a, b) = (&self.hashes, &other.hashes);
        if a.is_empty() && b.is_empty() {
            return 1.0;
        }
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        inter as f64 / (a.len() + b.len() - inter) as f64
    }
}

/// Hashes every contiguous run of `k` units. Char mode collapses
/// whitespace runs to one space first; token mode splits on whitespace.
pub fn shingle(text: &str, k: usize, mode: ShingleMode) -> Result<ShingleSet, DedupError> {
    if k == 0 {
        return Err(DedupError::ZeroWidth);
    }
    let mut hashes = Vec::new();
    match mode {
        ShingleMode::Char => {
            let norm = text.split_whitespace().collect::<Vec<_>>().join(" ");
            let bounds: Vec<usize> = norm.char_indices().map(|(i, _)| i).chain([norm.len()]).collect();
            let units = bounds.len() - 1;
            if units >= k {
                for start in 0..=units - k {
                    let s = &norm[bounds[start]..bounds[start + k]];
                    hashes.push(stable_hash(s.as_bytes(), SHINGLE_HASH_SEED));
                }
            }
        }
        ShingleMode::Token => {
            let toks: Vec<&str> = text.split_whitespace().collect();
            if toks.len() >= k {
                for w in toks.windows(k) {
                    hashes.push(stable_hash(w.join("\u{1}").as_bytes(), SHINGLE_HASH_SEED));
                }
            }
        }
    }
    Ok(ShingleSet::from_hashes(hashes, k))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub seed: u64,
}

impl MinHashSignature {
    pub fn num_perm(&self) -> usize {
        self.values.len()
    }
}

/// Per-permutation seeds, a SplitMix64 stream from `seed`.
fn perm_seeds(num_perm: usize, seed: u64) -> Vec<u64> {
    let mut state = seed;
    (0..num_perm)
        .map(|_| {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            mix64(state)
        })
        .collect()
}

/// `values[i] = min over s of mix64(s ^ seed_i)`.
pub fn signature(shingles: &ShingleSet, num_perm: usize, seed: u64) -> Result<MinHashSignature, DedupError> {
    if num_perm == 0 {
        return Err(DedupError::ZeroPerm);
    }
    if shingles.is_empty() {
        return Err(DedupError::EmptyShingles);
    }
    let seeds = perm_seeds(num_perm, seed);
    let mut values = vec![u64::MAX; num_perm];
    for &s in shingles.hashes() {
        for (v, &ps) in values.iter_mut().zip(&seeds) {
            let h = mix64(s ^ ps);
            if h < *v {
                *v = h;
            }
        }
    }
    Ok(MinHashSignature { values, seed })
}

pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.values.len() != b.values.len() || a.seed != b.seed {
        return Err(DedupError::SignatureMismatch);
    }
    let same = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshConfig {
    pub bands: usize,
    pub rows: usize,
}

impl Default for LshConfig {
    fn default() -> Self {
        LshConfig { bands: DEFAULT_BANDS, rows: DEFAULT_ROWS }
    }
}

impl LshConfig {
    pub fn check(&self, num_perm: usize) -> Result<(), DedupError> {
        let product = self.bands * self.rows;
        if product != num_perm || product == 0 {
            return Err(DedupError::BandMismatch { product, num_perm });
        }
        Ok(())
    }
}

/// Index pairs `(i, j)` with `i < j` that share at least one identical band.
pub fn lsh_candidates(
    signatures: &[MinHashSignature],
    cfg: &LshConfig,
) -> Result<BTreeSet<(usize, usize)>, DedupError> {
    let Some(first) = signatures.first() else {
        return Ok(BTreeSet::new());
    };
    cfg.check(first.num_perm())?;
    if signatures.iter().any(|s| s.num_perm() != first.num_perm() || s.seed != first.seed) {
        return Err(DedupError::SignatureMismatch);
    }
    let per_band: Vec<Vec<(usize, usize)>> = (0..cfg.bands)
        .into_par_iter()
        .map(|band| {
            let range = band * cfg.rows..(band + 1) * cfg.rows;
            let mut buckets: HashMap<&[u64], Vec<usize>> = HashMap::new();
            for (i, sig) in signatures.iter().enumerate() {
                buckets.entry(&sig.values[range.clone()]).or_default().push(i);
            }
            let mut pairs = Vec::new();
            for members in buckets.values() {
                for (x, &i) in members.iter().enumerate() {
                    for &j in &members[x + 1..] {
                        pairs.push((i, j));
                    }
                }
            }
            pairs
        })
        .collect();
    Ok(per_band.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepPolicy {
    /// Lexicographically smallest id in the cluster.
    #[default]
    SmallestId,
    /// Earliest document in input order.
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    /// `None` picks [`ShingleConfig::for_lang`] per document.
    pub shingle: Option<ShingleConfig>,
    pub num_perm: usize,
    pub seed: u64,
    pub lsh: LshConfig,
    pub threshold: f64,
    pub keep: KeepPolicy,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            shingle: None,
            num_perm: DEFAULT_NUM_PERM,
            seed: DEFAULT_SEED,
            lsh: LshConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            keep: KeepPolicy::SmallestId,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(DedupError::Threshold(self.threshold));
        }
        if let Some(s) = self.shingle {
            if s.k == 0 {
                return Err(DedupError::ZeroWidth);
            }
        }
        self.lsh.check(self.num_perm)
    }

    fn shingle_config(&self, doc: &Document) -> ShingleConfig {
        self.shingle.unwrap_or_else(|| ShingleConfig::for_lang(doc.lang_code()))
    }
}

/// Shingle set of a document. Texts shorter than `k` units fall back to a
/// single hash of the whole text so that they can still match exact copies.
pub fn document_shingles(doc: &Document, cfg: &DedupConfig) -> ShingleSet {
    let sc = cfg.shingle_config(doc);
    let set = shingle(&doc.text, sc.k.max(1), sc.mode).expect("k checked by validate");
    if set.is_empty() {
        ShingleSet::from_hashes(vec![stable_hash(doc.text.as_bytes(), SHINGLE_HASH_SEED ^ 1)], sc.k)
    } else {
        set
    }
}

/// Signatures for every document, in input order.
pub fn compute_signatures(docs: &[Document], cfg: &DedupConfig) -> Result<Vec<MinHashSignature>, DedupError> {
    cfg.validate()?;
    docs.par_iter().map(|d| signature(&document_shingles(d, cfg), cfg.num_perm, cfg.seed)).collect()
}

#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    pub kept: Vec<Document>,
    /// Each carries `meta.duplicate_of` naming a kept document.
    pub removed: Vec<Document>,
    pub candidate_pairs: usize,
    pub verified_pairs: usize,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index as root keeps the structure order-independent.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

pub fn deduplicate(docs: Vec<Document>, cfg: &DedupConfig) -> Result<DedupOutcome, DedupError> {
    let sigs = compute_signatures(&docs, cfg)?;
    deduplicate_with_signatures(docs, &sigs, cfg)
}

/// Like [`deduplicate`] but with precomputed signatures (one per document,
/// same order).
pub fn deduplicate_with_signatures(
    docs: Vec<Document>,
    sigs: &[MinHashSignature],
    cfg: &DedupConfig,
) -> Result<DedupOutcome, DedupError> {
    cfg.validate()?;
    if sigs.len() != docs.len() {
        return Err(DedupError::SignatureMismatch);
    }
    let candidates = lsh_candidates(sigs, &cfg.lsh)?;
    let verified: Vec<(usize, usize)> = candidates
        .par_iter()
        .filter_map(|&(i, j)| match estimate_jaccard(&sigs[i], &sigs[j]) {
            Ok(est) if est >= cfg.threshold => Some(Ok((i, j))),
            Ok(_) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<_, _>>()?;

    let mut uf = UnionFind::new(docs.len());
    for &(i, j) in &verified {
        uf.union(i, j);
    }
    let mut rep: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..docs.len() {
        let root = uf.find(i);
        let best = rep.entry(root).or_insert(i);
        let better = match cfg.keep {
            KeepPolicy::First => i < *best,
            KeepPolicy::SmallestId => (docs[i].id.as_str(), i) < (docs[*best].id.as_str(), *best),
        };
        if better {
            *best = i;
        }
    }
    let rep_of: Vec<usize> = (0..docs.len()).map(|i| rep[&uf.find(i)]).collect();
    let rep_ids: Vec<String> = rep_of.iter().map(|&r| docs[r].id.clone()).collect();

    let mut out =
        DedupOutcome { candidate_pairs: candidates.len(), verified_pairs: verified.len(), ..DedupOutcome::default() };
    for (i, mut doc) in docs.into_iter().enumerate() {
        if rep_of[i] == i {
            out.kept.push(doc);
        } else {
            doc.meta.insert("duplicate_of".into(), rep_ids[i].clone());
            out.removed.push(doc);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub input: usize,
    pub removed: usize,
}

impl PartitionStats {
    pub fn removed_fraction(&self) -> f64 {
        if self.input == 0 {
            0.0
        } else {
            self.removed as f64 / self.input as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PartitionedOutcome {
    pub outcome: DedupOutcome,
    pub english: PartitionStats,
    pub non_english: PartitionStats,
}

type Indexed = Vec<(usize, Document)>;

/// Deduplicates English and non-English documents in separate passes.
/// Kept and removed lists preserve input order.
pub fn deduplicate_partitioned(docs: Vec<Document>, cfg: &DedupConfig) -> Result<PartitionedOutcome, DedupError> {
    let (en, other): (Indexed, Indexed) = docs.into_iter().enumerate().partition(|(_, d)| d.lang_code() == "en");
    let run = |part: Indexed| -> Result<(Indexed, Indexed, DedupOutcome), DedupError> {
        let (idx, docs): (Vec<usize>, Vec<Document>) = part.into_iter().unzip();
        let pos: HashMap<String, usize> = docs.iter().zip(&idx).map(|(d, &i)| (d.id.clone(), i)).collect();
        let mut res = deduplicate(docs, cfg)?;
        let kept = res.kept.drain(..).map(|d| (pos[&d.id], d)).collect();
        let removed = res.removed.drain(..).map(|d| (pos[&d.id], d)).collect();
        Ok((kept, removed, res))
    };
    let (ek, er, eo) = run(en)?;
    let (ok, or, oo) = run(other)?;
    let english = PartitionStats { input: ek.len() + er.len(), removed: er.len() };
    let non_english = PartitionStats { input: ok.len() + or.len(), removed: or.len() };
    let merge = |a: Vec<(usize, Document)>, b: Vec<(usize, Document)>| {
        let mut all: Vec<(usize, Document)> = a.into_iter().chain(b).collect();
        all.sort_by_key(|(i, _)| *i);
        all.into_iter().map(|(_, d)| d).collect::<Vec<_>>()
    };
    Ok(PartitionedOutcome {
        outcome: DedupOutcome {
            kept: merge(ek, ok),
            removed: merge(er, or),
            candidate_pairs: eo.candidate_pairs + oo.candidate_pairs,
            verified_pairs: eo.verified_pairs + oo.verified_pairs,
        },
        english,
        non_english,
    })
}

/// Cached signature keyed by document id; `text_hash` guards against stale
/// entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedSignature {
    pub id: String,
    pub text_hash: u64,
    pub signature: MinHashSignature,
}

pub fn text_fingerprint(text: &str) -> u64 {
    stable_hash(text.as_bytes(), 0)
}

/// Writes a PFMH1 cache: magic, num_perm (u32), seed (u64), count (u64),
/// then per entry id, text hash and `num_perm` values.
pub fn write_signature_cache(path: impl AsRef<Path>, entries: &[CachedSignature]) -> Result<(), DedupError> {
    let mut w = BufWriter::new(File::create(path)?);
    let (num_perm, seed) = entries.first().map(|e| (e.signature.num_perm(), e.signature.seed)).unwrap_or((0, 0));
    if entries.iter().any(|e| e.signature.num_perm() != num_perm || e.signature.seed != seed) {
        return Err(DedupError::SignatureMismatch);
    }
    binio::write_magic(&mut w, CACHE_MAGIC)?;
    binio::write_u32(&mut w, num_perm as u32)?;
    binio::write_u64(&mut w, seed)?;
    binio::write_u64(&mut w, entries.len() as u64)?;
    for e in entries {
        binio::write_str(&mut w, &e.id)?;
        binio::write_u64(&mut w, e.text_hash)?;
        for &v in &e.signature.values {
            binio::write_u64(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_signature_cache(path: impl AsRef<Path>) -> Result<Vec<CachedSignature>, DedupError> {
    let mut r = BufReader::new(File::open(path)?);
    binio::expect_magic(&mut r, CACHE_MAGIC)?;
    let num_perm = binio::read_u32(&mut r)? as usize;
    let seed = binio::read_u64(&mut r)?;
    let count = binio::read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let id = binio::read_str(&mut r)?;
        let text_hash = binio::read_u64(&mut r)?;
        let values = (0..num_perm).map(|_| binio::read_u64(&mut r)).collect::<io::Result<_>>()?;
        out.push(CachedSignature { id, text_hash, signature: MinHashSignature { values, seed } });
    }
    Ok(out)
}

/// Signatures for `docs`, reusing cache entries whose id, text, num_perm
/// and seed still match. Returns the signatures and the number reused.
pub fn signatures_with_cache(
    docs: &[Document],
    cfg: &DedupConfig,
    cache: &[CachedSignature],
) -> Result<(Vec<MinHashSignature>, usize), DedupError> {
    cfg.validate()?;
    let by_id: HashMap<&str, &CachedSignature> = cache
        .iter()
        .filter(|c| c.signature.num_perm() == cfg.num_perm && c.signature.seed == cfg.seed)
        .map(|c| (c.id.as_str(), c))
        .collect();
    let sigs: Vec<(MinHashSignature, bool)> = docs
        .par_iter()
        .map(|d| match by_id.get(d.id.as_str()) {
            Some(c) if c.text_hash == text_fingerprint(&d.text) => Ok((c.signature.clone(), true)),
            _ => signature(&document_shingles(d, cfg), cfg.num_perm, cfg.seed).map(|s| (s, false)),
        })
        .collect::<Result<_, _>>()?;
    let reused = sigs.iter().filter(|(_, hit)| *hit).count();
    Ok((sigs.into_iter().map(|(s, _)| s).collect(), reused))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h(s: &str) -> u64 {
        stable_hash(s.as_bytes(), SHINGLE_HASH_SEED)
    }

    #[test]
    fn char_shingles_enumerate_windows() {
        let set = shingle("abcd", 2, ShingleMode::Char).unwrap();
        assert_eq!(set, ShingleSet::from_hashes(vec![h("ab"), h("bc"), h("cd")], 2));
        assert_eq!(shingle("aaaa", 2, ShingleMode::Char).unwrap().len(), 1);
        assert!(shingle("ab", 3, ShingleMode::Char).unwrap().is_empty());
        assert!(matches!(shingle("ab", 0, ShingleMode::Char), Err(DedupError::ZeroWidth)));
    }

    #[test]
    fn token_shingles_count() {
        assert_eq!(shingle("a b c d", 3, ShingleMode::Token).unwrap().len(), 2);
        assert!(shingle("a b", 3, ShingleMode::Token).unwrap().is_empty());
    }

    #[test]
    fn empty_set_cannot_be_signed() {
        let empty = ShingleSet::from_hashes(vec![], 3);
        assert!(matches!(signature(&empty, 8, 1), Err(DedupError::EmptyShingles)));
    }

    #[test]
    fn identical_sets_identical_signatures() {
        let a = shingle("the quick brown fox jumps", 2, ShingleMode::Token).unwrap();
        let (s1, s2) = (signature(&a, 64, 9).unwrap(), signature(&a, 64, 9).unwrap());
        assert_eq!(s1, s2);
        assert_eq!(estimate_jaccard(&s1, &s2).unwrap(), 1.0);
        let other_seed = signature(&a, 64, 10).unwrap();
        assert!(matches!(estimate_jaccard(&s1, &other_seed), Err(DedupError::SignatureMismatch)));
    }

    fn random_pair(rng: &mut ChaCha8Rng) -> (ShingleSet, ShingleSet) {
        let universe = rng.gen_range(20..400u64);
        let a: Vec<u64> = (0..universe).filter(|_| rng.gen_bool(0.5)).map(|x| mix64(x + 1)).collect();
        let b: Vec<u64> = (0..universe).filter(|_| rng.gen_bool(0.5)).map(|x| mix64(x + 1)).collect();
        (ShingleSet::from_hashes(a, 1), ShingleSet::from_hashes(b, 1))
    }

    #[test]
    fn estimator_tracks_exact_jaccard() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut abs, mut signed, mut n) = (0.0, 0.0, 0.0);
        while n < 1000.0 {
            let (a, b) = random_pair(&mut rng);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let exact = a.jaccard(&b);
            let est = estimate_jaccard(&signature(&a, 128, 7).unwrap(), &signature(&b, 128, 7).unwrap()).unwrap();
            abs += (est - exact).abs();
            signed += est - exact;
            n += 1.0;
        }
        assert!(abs / n <= 0.05, "mean abs error {}", abs / n);
        assert!((signed / n).abs() <= 0.01, "bias {}", signed / n);
    }

    fn brute_force(sigs: &[MinHashSignature], cfg: &LshConfig) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for i in 0..sigs.len() {
            for j in i + 1..sigs.len() {
                let hit = (0..cfg.bands).any(|b| {
                    let r = b * cfg.rows..(b + 1) * cfg.rows;
                    sigs[i].values[r.clone()] == sigs[j].values[r]
                });
                if hit {
                    out.insert((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn candidates_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<u64> = (0..60).map(mix64).collect();
        let sigs: Vec<MinHashSignature> = (0..100)
            .map(|_| {
                // Overlapping sets so that some bands collide.
                let set: Vec<u64> = base.iter().copied().filter(|_| rng.gen_bool(0.9)).collect();
                signature(&ShingleSet::from_hashes(set, 1), 32, 3).unwrap()
            })
            .collect();
        let cfg = LshConfig { bands: 8, rows: 4 };
        let got = lsh_candidates(&sigs, &cfg).unwrap();
        assert!(!got.is_empty());
        assert_eq!(got, brute_force(&sigs, &cfg));
    }

    #[test]
    fn band_config_must_cover_signature() {
        let s = signature(&ShingleSet::from_hashes(vec![1], 1), 16, 0).unwrap();
        let err = lsh_candidates(&[s.clone(), s], &LshConfig { bands: 3, rows: 5 });
        assert!(matches!(err, Err(DedupError::BandMismatch { product: 15, num_perm: 16 })));
    }

    #[test]
    fn identical_docs_collapse_to_smallest_id() {
        let docs: Vec<Document> =
            ["d3", "d1", "d2"].iter().map(|id| Document::new(*id, "same text here again")).collect();
        let out = deduplicate(docs, &DedupConfig::default()).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].id, "d1");
        assert!(out.removed.iter().all(|d| d.meta["duplicate_of"] == "d1"));
    }

    #[test]
    fn keep_first_policy() {
        let docs: Vec<Document> = ["d3", "d1"].iter().map(|id| Document::new(*id, "same text here again")).collect();
        let cfg = DedupConfig { keep: KeepPolicy::First, ..DedupConfig::default() };
        let out = deduplicate(docs, &cfg).unwrap();
        assert_eq!(out.kept[0].id, "d3");
    }

    #[test]
    fn short_texts_still_match_exact_copies() {
        let docs = vec![Document::new("a", "hi"), Document::new("b", "hi"), Document::new("c", "yo")];
        let out = deduplicate(docs, &DedupConfig::default()).unwrap();
        assert_eq!(out.kept.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
    }

    #[test]
    fn cache_round_trip_and_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sigs.pfmh");
        let docs = vec![Document::new("a", "one two three four"), Document::new("b", "five six seven eight")];
        let cfg = DedupConfig::default();
        let sigs = compute_signatures(&docs, &cfg).unwrap();
        let entries: Vec<CachedSignature> = docs
            .iter()
            .zip(&sigs)
            .map(|(d, s)| CachedSignature {
                id: d.id.clone(),
                text_hash: text_fingerprint(&d.text),
                signature: s.clone(),
            })
            .collect();
        write_signature_cache(&path, &entries).unwrap();
        let back = read_signature_cache(&path).unwrap();
        assert_eq!(back, entries);
        let mut changed = docs.clone();
        changed[1].text = "different now entirely".into();
        let (again, reused) = signatures_with_cache(&changed, &cfg, &back).unwrap();
        assert_eq!(reused, 1);
        assert_eq!(again[0], sigs[0]);
        assert_ne!(again[1], sigs[1]);
    }

    proptest! {
        #[test]
        fn superset_signature_is_elementwise_le(
            base in proptest::collection::vec(any::<u64>(), 1..50),
            extra in proptest::collection::vec(any::<u64>(), 0..50),
        ) {
            let sub = ShingleSet::from_hashes(base.clone(), 1);
            let sup = ShingleSet::from_hashes(base.into_iter().chain(extra).collect(), 1);
            let (a, b) = (signature(&sub, 32, 11).unwrap(), signature(&sup, 32, 11).unwrap());
            prop_assert!(b.values.iter().zip(&a.values).all(|(x, y)| x <= y));
        }

        #[test]
        fn shingle_count_bounded(text in "[a-c ]{0,30}", k in 1usize..5) {
            let set = shingle(&text, k, ShingleMode::Char).unwrap();
            let units = text.split_whitespace().collect::<Vec<_>>().join(" ").chars().count();
            prop_assert!(set.len() <= units.saturating_sub(k - 1));
        }
    }
}
