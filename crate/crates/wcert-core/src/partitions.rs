//! Entanglement structures over mode sets: combinations, structures, class
//! signatures, irreducibility, and separable-pair counting.
//!
//! A *combination* is a non-empty subset of the modes `{1..N}`. A *structure*
//! is a set partition of all modes into combinations; it models which modes
//! are mutually entangled. A *class signature* is the multiset of block sizes
//! of a structure; every quantity in the witnesses depends on a structure
//! only through its signature.
//!
//! The witness prefactor `n_sep_max(N, M)` is the largest number of separable
//! mode pairs over all irreducible signatures whose blocks have size at most
//! `M`. Maximization runs over integer partitions rather than set partitions,
//! since `n_sep` depends only on block sizes.

use serde::Serialize;

use crate::{Error, Result};

/// Default cap on the mode count for set-partition enumeration.
///
/// Bell(10) = 115 975 structures; enumeration above this is refused unless
/// the caller raises the cap explicitly.
pub const DEFAULT_ENUM_CAP: usize = 10;

/// A non-empty subset of mode indices, stored sorted ascending, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Combination {
    members: Vec<usize>,
}

impl Combination {
    /// Build a combination from mode indices in `{1..n}` for the given `n`.
    ///
    /// Indices are sorted; duplicates, zeros, and indices above `n` are
    /// rejected.
    pub fn new(mut members: Vec<usize>, n: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Validation("combination must be non-empty".into()));
        }
        members.sort_unstable();
        if members[0] == 0 || *members.last().unwrap() > n {
            return Err(Error::Validation(format!(
                "combination members must lie in 1..={n}"
            )));
        }
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("combination has repeated members".into()));
        }
        Ok(Self { members })
    }

    /// Sorted member list, 1-based.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Number of modes in the combination.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    /// True when the combination is empty (never for validated values).
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Membership test for a 1-based mode index.
    pub fn contains(&self, mode: usize) -> bool {
        self.members.binary_search(&mode).is_ok()
    }
}

/// A set partition of the modes `{1..n}` into combinations.
///
/// Blocks are stored sorted by their smallest member, which makes the
/// rendered form and all derived reports deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Structure {
    blocks: Vec<Combination>,
    n_modes: usize,
}

impl Structure {
    /// Build a structure from blocks that must partition `{1..n}` exactly.
    pub fn new(mut blocks: Vec<Combination>, n: usize) -> Result<Self> {
        blocks.sort_by_key(|b| b.members()[0]);
        let mut seen = vec![false; n + 1];
        let mut covered = 0usize;
        for block in &blocks {
            for &m in block.members() {
                if m > n || seen[m] {
                    return Err(Error::Validation(format!(
                        "blocks must be disjoint and lie in 1..={n}"
                    )));
                }
                seen[m] = true;
                covered += 1;
            }
        }
        if covered != n {
            return Err(Error::Validation(format!(
                "blocks cover {covered} of {n} modes"
            )));
        }
        Ok(Self {
            blocks,
            n_modes: n,
        })
    }

    /// Convenience constructor from plain index lists.
    pub fn from_blocks(blocks: &[Vec<usize>], n: usize) -> Result<Self> {
        let combos = blocks
            .iter()
            .map(|b| Combination::new(b.clone(), n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(combos, n)
    }

    /// The single-block structure `{1..n}`.
    pub fn full(n: usize) -> Result<Self> {
        Self::from_blocks(&[(1..=n).collect()], n)
    }

    /// Blocks sorted by smallest member.
    pub fn blocks(&self) -> &[Combination] {
        &self.blocks
    }

    /// Total number of modes partitioned.
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Multiset of block sizes.
    pub fn signature(&self) -> ClassSignature {
        ClassSignature::new(self.blocks.iter().map(Combination::len).collect())
            .expect("valid structure always yields a valid signature")
    }

    /// Number of separable mode pairs under this structure.
    pub fn n_sep(&self) -> usize {
        n_sep(&self.signature())
    }

    /// Bracketed text form, e.g. `[1 2 3][4 5][6]`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push('[');
            for (k, m) in block.members().iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                out.push_str(&m.to_string());
            }
            out.push(']');
        }
        out
    }
}

/// The multiset of block sizes of a structure, sorted descending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct ClassSignature {
    sizes: Vec<usize>,
}

impl ClassSignature {
    /// Build a signature from block sizes; each size must be at least 1.
    pub fn new(mut sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Validation(
                "signature needs at least one block and no zero sizes".into(),
            ));
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        Ok(Self { sizes })
    }

    /// Block sizes, descending.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Total mode count represented by the signature.
    pub fn n_modes(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Brace-set text form, e.g. `{3,2,1}`.
    pub fn render(&self) -> String {
        let inner: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        format!("{{{}}}", inner.join(","))
    }
}

/// True when no two blocks of the signature can merge without the merged
/// size exceeding `m`; only such signatures can attain the separable-pair
/// maximum, since merging is the reduction that absorbs a structure into a
/// coarser one.
pub fn is_irreducible(sig: &ClassSignature, m: usize) -> bool {
    let sizes = sig.sizes();
    if sizes.len() < 2 {
        return true;
    }
    // Sizes are sorted descending, so the two smallest are the last two.
    let a = sizes[sizes.len() - 1];
    let b = sizes[sizes.len() - 2];
    a + b > m
}

/// Number of separable mode pairs of a signature:
/// `C(N,2) - Σ_blocks C(size,2)`.
pub fn n_sep(sig: &ClassSignature) -> usize {
    let n = sig.n_modes();
    let within: usize = sig.sizes().iter().map(|&s| s * (s - 1) / 2).sum();
    n * (n - 1) / 2 - within
}

/// Maximal separable-pair count over irreducible signatures with all block
/// sizes at most `m`; requires `1 ≤ m < n`.
pub fn n_sep_max(n: usize, m: usize) -> Result<usize> {
    Ok(n_sep_max_with_signature(n, m)?.0)
}

/// As [`n_sep_max`], also returning the attaining signature.
///
/// Ties are broken toward the lexicographically largest signature so reports
/// are reproducible. For `m = n-1` the result equals the closed form
/// `⌊n²/4⌋` (two blocks as close to equal size as possible), which is used
/// directly above the enumeration range.
pub fn n_sep_max_with_signature(n: usize, m: usize) -> Result<(usize, ClassSignature)> {
    if n < 2 || m < 1 || m >= n {
        return Err(Error::Domain(format!(
            "n_sep_max needs 2 <= n and 1 <= m < n, got n={n}, m={m}"
        )));
    }
    if m == n - 1 && n > 24 {
        // Closed form: the irreducible signatures are exactly the two-block
        // splits {n-k, k}; n_sep = k(n-k) is maximal at k = ⌊n/2⌋.
        let k = n / 2;
        let sig = ClassSignature::new(vec![n - k, k])?;
        return Ok((n * n / 4, sig));
    }
    if n > 128 {
        return Err(Error::EnumerationCap(format!(
            "integer-partition search capped at n = 128, got n = {n}"
        )));
    }
    let mut best: Option<(usize, ClassSignature)> = None;
    let mut parts: Vec<usize> = Vec::new();
    descend_partitions(n, m.min(n), &mut parts, &mut |sizes| {
        let sig = ClassSignature::new(sizes.to_vec()).expect("nonzero parts");
        if !is_irreducible(&sig, m) {
            return;
        }
        let value = n_sep(&sig);
        let better = match &best {
            None => true,
            Some((v, s)) => value > *v || (value == *v && sig > *s),
        };
        if better {
            best = Some((value, sig));
        }
    });
    best.ok_or_else(|| {
        Error::Domain(format!(
            "no irreducible signature exists for n={n}, m={m}"
        ))
    })
}

/// Enumerate integer partitions of `remaining` with parts ≤ `max_part`,
/// parts non-increasing, invoking `f` on each complete partition.
fn descend_partitions(
    remaining: usize,
    max_part: usize,
    parts: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    if remaining == 0 {
        f(parts);
        return;
    }
    let hi = max_part.min(remaining);
    for part in (1..=hi).rev() {
        parts.push(part);
        descend_partitions(remaining - part, part, parts, f);
        parts.pop();
    }
}

/// All set partitions of `{1..n}` with every block size at most `max_block`,
/// in lexicographic order of their restricted-growth strings.
///
/// Uses the default enumeration cap of [`DEFAULT_ENUM_CAP`] modes; see
/// [`enumerate_structures_capped`] to raise it.
pub fn enumerate_structures(n: usize, max_block: usize) -> Result<Vec<Structure>> {
    enumerate_structures_capped(n, max_block, DEFAULT_ENUM_CAP)
}

/// As [`enumerate_structures`] with an explicit cap on `n`.
pub fn enumerate_structures_capped(
    n: usize,
    max_block: usize,
    cap: usize,
) -> Result<Vec<Structure>> {
    if n == 0 || max_block == 0 || max_block > n {
        return Err(Error::Domain(format!(
            "enumeration needs 1 <= max_block <= n, got n={n}, max_block={max_block}"
        )));
    }
    if n > cap {
        return Err(Error::EnumerationCap(format!(
            "set-partition enumeration for n = {n} exceeds the cap {cap} \
             (about {} structures)",
            bell_number_estimate(n)
        )));
    }
    // Restricted-growth strings: element k (0-based) gets a block label in
    // 0..=max_label+1; lexicographic label strings give deterministic order.
    let mut labels = vec![0usize; n];
    let mut sizes = vec![0usize; n + 1];
    let mut out = Vec::new();
    fn recurse(
        k: usize,
        n: usize,
        max_block: usize,
        max_label: usize,
        labels: &mut Vec<usize>,
        sizes: &mut Vec<usize>,
        out: &mut Vec<Structure>,
    ) {
        if k == n {
            let n_blocks = max_label + 1;
            let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); n_blocks];
            for (elem, &lab) in labels.iter().enumerate() {
                blocks[lab].push(elem + 1);
            }
            out.push(
                Structure::from_blocks(&blocks, n)
                    .expect("restricted-growth string yields a valid partition"),
            );
            return;
        }
        let hi = (max_label + 1).min(k);
        for lab in 0..=hi {
            if sizes[lab] == max_block {
                continue;
            }
            labels[k] = lab;
            sizes[lab] += 1;
            recurse(
                k + 1,
                n,
                max_block,
                max_label.max(lab),
                labels,
                sizes,
                out,
            );
            sizes[lab] -= 1;
        }
    }
    recurse(0, n, max_block, 0, &mut labels, &mut sizes, &mut out);
    Ok(out)
}

/// Bell-number estimate used in enumeration refusal messages; saturates at
/// `u128::MAX` far above any realistic request.
fn bell_number_estimate(n: usize) -> u128 {
    // Bell triangle with saturating arithmetic.
    let n = n.min(40);
    let mut row = vec![1u128];
    for _ in 1..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for &x in &row {
            let prev = *next.last().unwrap();
            next.push(prev.saturating_add(x));
        }
        row = next;
    }
    *row.last().unwrap()
}
