//! Stochastic context-free grammars with production usage counts.
//!
//! Terminals never appear in production right-hand sides directly: each
//! terminal gets a dedicated preterminal with a single lexical
//! production, which keeps the merging and chunking operators uniform.
//! Production probabilities are implicit in the usage counts; for each
//! left-hand side, its internal and lexical productions pool into one
//! multinomial.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Tokenization};
use crate::count::{count_from_int, count_to_f64, is_positive, parse_count, Count};
use crate::error::{Error, Result};
use crate::hmm::table_log_likelihood;

/// Operator descriptor used by search traces.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "type", content = "args", rename_all = "snake_case")]
pub enum ScfgOp {
    Merge { keep: String, drop: String },
    Chunk { seq: Vec<String> },
}

#[derive(Clone, Debug)]
pub struct Scfg {
    start: String,
    terminals: BTreeSet<String>,
    /// LHS -> RHS (nonterminal sequence) -> count.
    internal: BTreeMap<String, BTreeMap<Vec<String>, Count>>,
    /// LHS -> terminal -> count.
    lexical: BTreeMap<String, BTreeMap<String, Count>>,
    /// Counter for generated chunk nonterminal names (X1, X2, ...).
    next_chunk: u32,
}

/// Equality over the model content; the chunk-name counter is
/// bookkeeping and not part of it.
impl PartialEq for Scfg {
    fn eq(&self, other: &Self) -> bool {
        self.start == other.start
            && self.terminals == other.terminals
            && self.internal == other.internal
            && self.lexical == other.lexical
    }
}

impl Scfg {
    /// Builds the sample-memorizing grammar: one preterminal per
    /// terminal and one top-level production per distinct sample.
    pub fn incorporate(corpus: &Corpus) -> Result<Scfg> {
        if corpus.samples().is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut g = Scfg {
            start: "S".to_string(),
            terminals: BTreeSet::new(),
            internal: BTreeMap::new(),
            lexical: BTreeMap::new(),
            next_chunk: 1,
        };
        for (tokens, count) in corpus.samples() {
            g.add_sample(tokens, *count);
        }
        Ok(g)
    }

    /// Adds one sample: a top-level production over the preterminals of
    /// its tokens, bumping each preterminal's lexical count per
    /// occurrence. New terminals get fresh preterminals; a terminal that
    /// already has lexical owners goes to the one with the largest count
    /// for it (ties: lexicographically smallest name).
    pub fn add_sample(&mut self, tokens: &[String], count: Count) {
        let mut rhs = Vec::with_capacity(tokens.len());
        for t in tokens {
            let nt = self.preterminal_for(t);
            self.terminals.insert(t.clone());
            *self
                .lexical
                .entry(nt.clone())
                .or_default()
                .entry(t.clone())
                .or_insert_with(Count::default) += count;
            rhs.push(nt);
        }
        *self
            .internal
            .entry(self.start.clone())
            .or_default()
            .entry(rhs)
            .or_insert_with(Count::default) += count;
    }

    fn preterminal_for(&self, terminal: &str) -> String {
        let mut best: Option<(Count, &String)> = None;
        for (lhs, table) in &self.lexical {
            if let Some(c) = table.get(terminal) {
                let better = match &best {
                    None => true,
                    Some((bc, bl)) => c > bc || (c == bc && lhs < *bl),
                };
                if better {
                    best = Some((*c, lhs));
                }
            }
        }
        if let Some((_, lhs)) = best {
            return lhs.clone();
        }
        self.fresh_preterminal_name(terminal)
    }

    fn fresh_preterminal_name(&self, terminal: &str) -> String {
        let taken = self.nonterminals();
        let mut chars = terminal.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c.is_ascii_lowercase() {
                let upper = c.to_ascii_uppercase().to_string();
                if upper != self.start && !taken.contains(&upper) {
                    return upper;
                }
            }
        }
        let mut k = 1u32;
        loop {
            let name = format!("T{k}");
            if !taken.contains(&name) {
                return name;
            }
            k += 1;
        }
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn terminals(&self) -> &BTreeSet<String> {
        &self.terminals
    }

    /// All nonterminals: the start symbol plus everything appearing as a
    /// left-hand side or inside an internal right-hand side.
    pub fn nonterminals(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        set.insert(self.start.clone());
        for (lhs, rhss) in &self.internal {
            set.insert(lhs.clone());
            for rhs in rhss.keys() {
                set.extend(rhs.iter().cloned());
            }
        }
        set.extend(self.lexical.keys().cloned());
        set
    }

    pub fn internal_productions(&self) -> impl Iterator<Item = (&String, &Vec<String>, &Count)> {
        self.internal
            .iter()
            .flat_map(|(lhs, rhss)| rhss.iter().map(move |(rhs, c)| (lhs, rhs, c)))
    }

    pub fn lexical_productions(&self) -> impl Iterator<Item = (&String, &String, &Count)> {
        self.lexical
            .iter()
            .flat_map(|(lhs, ts)| ts.iter().map(move |(t, c)| (lhs, t, c)))
    }

    pub fn num_internal(&self) -> usize {
        self.internal.values().map(|m| m.len()).sum()
    }

    pub fn num_lexical(&self) -> usize {
        self.lexical.values().map(|m| m.len()).sum()
    }

    /// Total nonterminal occurrences across all productions: each LHS
    /// counts once and each RHS nonterminal once.
    pub fn nonterminal_occurrences(&self) -> usize {
        let internal: usize = self
            .internal
            .values()
            .flat_map(|m| m.keys())
            .map(|rhs| 1 + rhs.len())
            .sum();
        internal + self.num_lexical()
    }

    /// Left-hand sides that own at least one production.
    pub fn lhs_set(&self) -> BTreeSet<String> {
        let mut set: BTreeSet<String> = self.internal.keys().cloned().collect();
        set.extend(self.lexical.keys().cloned());
        set
    }

    /// The pooled count vector of one LHS's multinomial (internal and
    /// lexical productions together), in deterministic order.
    pub fn lhs_counts(&self, lhs: &str) -> Vec<Count> {
        let mut counts = Vec::new();
        if let Some(rhss) = self.internal.get(lhs) {
            counts.extend(rhss.values().copied());
        }
        if let Some(ts) = self.lexical.get(lhs) {
            counts.extend(ts.values().copied());
        }
        counts
    }

    /// LHSs owning an internal production that mentions `nt` in its RHS.
    pub(crate) fn lhss_mentioning(&self, nt: &str) -> BTreeSet<String> {
        self.internal
            .iter()
            .filter(|(_, rhss)| rhss.keys().any(|rhs| rhs.iter().any(|s| s == nt)))
            .map(|(lhs, _)| lhs.clone())
            .collect()
    }

    /// LHSs owning an internal production in which `seq` occurs.
    pub(crate) fn lhss_containing_seq(&self, seq: &[String]) -> BTreeSet<String> {
        self.internal
            .iter()
            .filter(|(_, rhss)| rhss.keys().any(|rhs| contains_seq(rhs, seq)))
            .map(|(lhs, _)| lhs.clone())
            .collect()
    }

    /// Rewrites every occurrence of `drop` to `keep`, consolidating
    /// productions that become identical and deleting unit
    /// self-productions `keep -> keep` created by the rewrite (their
    /// counts are discarded). To merge with the start symbol, pass it as
    /// `keep`.
    pub fn merge_nonterminals(&self, keep: &str, drop: &str) -> Result<Scfg> {
        if keep == drop {
            return Err(Error::InvalidOp(format!("cannot merge {keep} with itself")));
        }
        let nts = self.nonterminals();
        if !nts.contains(keep) || !nts.contains(drop) {
            return Err(Error::InvalidOp(format!("unknown nonterminal in merge ({keep}, {drop})")));
        }
        if drop == self.start {
            return Err(Error::InvalidOp(format!(
                "cannot drop the start symbol; pass keep = {drop}"
            )));
        }

        let map = |s: &String| if s == drop { keep.to_string() } else { s.clone() };

        let mut internal: BTreeMap<String, BTreeMap<Vec<String>, Count>> = BTreeMap::new();
        for (lhs, rhss) in &self.internal {
            let new_lhs = map(lhs);
            for (rhs, c) in rhss {
                let new_rhs: Vec<String> = rhs.iter().map(&map).collect();
                if new_rhs.len() == 1 && new_rhs[0] == new_lhs {
                    continue; // vacuous derivation step, count discarded
                }
                *internal
                    .entry(new_lhs.clone())
                    .or_default()
                    .entry(new_rhs)
                    .or_insert_with(Count::default) += *c;
            }
        }
        let mut lexical: BTreeMap<String, BTreeMap<String, Count>> = BTreeMap::new();
        for (lhs, ts) in &self.lexical {
            let new_lhs = map(lhs);
            let entry = lexical.entry(new_lhs).or_default();
            for (t, c) in ts {
                *entry.entry(t.clone()).or_insert_with(Count::default) += *c;
            }
        }
        Ok(Scfg {
            start: self.start.clone(),
            terminals: self.terminals.clone(),
            internal,
            lexical,
            next_chunk: self.next_chunk,
        })
    }

    /// Abbreviates `seq` with `new_name`: maximal left-to-right
    /// non-overlapping occurrences in every internal RHS are replaced,
    /// and the defining production `new_name -> seq` is added with count
    /// equal to the weighted number of replacements.
    pub fn chunk_sequence(&self, seq: &[String], new_name: &str) -> Result<Scfg> {
        if seq.len() < 2 {
            return Err(Error::InvalidOp(format!(
                "chunk sequence must have length >= 2, got {}",
                seq.len()
            )));
        }
        if self.nonterminals().contains(new_name) {
            return Err(Error::InvalidOp(format!("nonterminal {new_name} already exists")));
        }

        let mut internal: BTreeMap<String, BTreeMap<Vec<String>, Count>> = BTreeMap::new();
        let mut defining_count = Count::default();
        let mut replaced_any = false;
        for (lhs, rhss) in &self.internal {
            let entry = internal.entry(lhs.clone()).or_default();
            for (rhs, c) in rhss {
                let (new_rhs, occurrences) = replace_seq(rhs, seq, new_name);
                if occurrences > 0 {
                    replaced_any = true;
                    defining_count += *c * count_from_int(occurrences as i64);
                }
                *entry.entry(new_rhs).or_insert_with(Count::default) += *c;
            }
        }
        if !replaced_any {
            return Err(Error::InvalidOp(format!(
                "sequence {} does not occur in any right-hand side",
                seq.join(" ")
            )));
        }
        internal
            .entry(new_name.to_string())
            .or_default()
            .insert(seq.to_vec(), defining_count);
        Ok(Scfg {
            start: self.start.clone(),
            terminals: self.terminals.clone(),
            internal,
            lexical: self.lexical.clone(),
            next_chunk: self.next_chunk,
        })
    }

    /// Chunks `seq` under a generated name (`X1`, `X2`, ...), returning
    /// the new grammar and the name it chose.
    pub fn chunk_auto(&self, seq: &[String]) -> Result<(Scfg, String)> {
        let taken = self.nonterminals();
        let mut counter = self.next_chunk;
        let name = loop {
            let candidate = format!("X{counter}");
            counter += 1;
            if !taken.contains(&candidate) {
                break candidate;
            }
        };
        let mut g = self.chunk_sequence(seq, &name)?;
        g.next_chunk = counter;
        Ok((g, name))
    }

    pub fn apply(&self, op: &ScfgOp) -> Result<Scfg> {
        match op {
            ScfgOp::Merge { keep, drop } => self.merge_nonterminals(keep, drop),
            ScfgOp::Chunk { seq } => self.chunk_auto(seq).map(|(g, _)| g),
        }
    }

    /// Log likelihood of the tracked derivations under
    /// maximum-likelihood parameters: per LHS, internal and lexical
    /// productions pool into one multinomial.
    pub fn viterbi_log_likelihood(&self) -> f64 {
        self.lhs_set()
            .iter()
            .map(|lhs| {
                let counts = self.lhs_counts(lhs);
                table_log_likelihood(counts.iter())
            })
            .sum()
    }

    /// All merge pairs plus all contiguous RHS subsequences of length
    /// `2..=max_chunk_len` whose weighted occurrence count (production
    /// count times occurrences, overlapping positions included) reaches
    /// `min_occurrences`. Deterministic order: merges first, then chunks
    /// by (length, sequence).
    pub fn candidates(&self, max_chunk_len: usize, min_occurrences: Count) -> Vec<ScfgOp> {
        let mut ops = Vec::new();
        let nts: Vec<String> = self.nonterminals().into_iter().collect();
        for i in 0..nts.len() {
            for j in (i + 1)..nts.len() {
                let (a, b) = (&nts[i], &nts[j]);
                let (keep, drop) = if b == &self.start {
                    (b.clone(), a.clone())
                } else {
                    (a.clone(), b.clone())
                };
                ops.push(ScfgOp::Merge { keep, drop });
            }
        }
        let mut windows: BTreeMap<Vec<String>, Count> = BTreeMap::new();
        for rhss in self.internal.values() {
            for (rhs, c) in rhss {
                for len in 2..=max_chunk_len.min(rhs.len()) {
                    for start in 0..=(rhs.len() - len) {
                        *windows
                            .entry(rhs[start..start + len].to_vec())
                            .or_insert_with(Count::default) += *c;
                    }
                }
            }
        }
        let mut chunks: Vec<(usize, Vec<String>)> = windows
            .into_iter()
            .filter(|(_, w)| *w >= min_occurrences)
            .map(|(seq, _)| (seq.len(), seq))
            .collect();
        chunks.sort();
        ops.extend(chunks.into_iter().map(|(_, seq)| ScfgOp::Chunk { seq }));
        ops
    }

    /// All terminal strings of length `<= max_len` derivable from the
    /// start symbol, as token sequences.
    pub fn enumerate_language(&self, max_len: usize) -> BTreeSet<Vec<String>> {
        let nts = self.nonterminals();
        // sets[nt][len - 1]: strings of exactly `len` terminals.
        let mut sets: BTreeMap<&String, Vec<BTreeSet<Vec<String>>>> =
            nts.iter().map(|nt| (nt, vec![BTreeSet::new(); max_len])).collect();

        for len in 1..=max_len {
            for nt in &nts {
                let mut acc: BTreeSet<Vec<String>> = BTreeSet::new();
                if len == 1 {
                    if let Some(ts) = self.lexical.get(nt) {
                        acc.extend(ts.keys().map(|t| vec![t.clone()]));
                    }
                }
                if let Some(rhss) = self.internal.get(nt) {
                    for rhs in rhss.keys() {
                        if rhs.len() >= 2 && rhs.len() <= len {
                            extend_compositions(&sets, rhs, len, &mut acc);
                        }
                    }
                }
                sets.get_mut(nt).unwrap()[len - 1] = acc;
            }
            // Unit (non-self) productions: close at this length.
            loop {
                let mut changed = false;
                for nt in &nts {
                    if let Some(rhss) = self.internal.get(nt) {
                        let units: Vec<&String> = rhss
                            .keys()
                            .filter(|rhs| rhs.len() == 1)
                            .map(|rhs| &rhs[0])
                            .collect();
                        for target in units {
                            let from: Vec<Vec<String>> = sets
                                .get(target)
                                .map(|v| v[len - 1].iter().cloned().collect())
                                .unwrap_or_default();
                            let into = &mut sets.get_mut(nt).unwrap()[len - 1];
                            for s in from {
                                changed |= into.insert(s);
                            }
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
        }
        let mut result = BTreeSet::new();
        if let Some(per_len) = sets.get(&self.start.to_string()) {
            for set in per_len {
                result.extend(set.iter().cloned());
            }
        }
        result
    }

    /// Draws `n` strings by top-down stochastic derivation. Production
    /// probabilities follow the usage counts (normalized per LHS), or
    /// are uniform when `uniform` is set. Derivations exceeding
    /// `max_expansions` production applications are rejected and
    /// redrawn; identical strings consolidate. Deterministic per seed.
    pub fn sample_strings(
        &self,
        n: usize,
        seed: u64,
        max_expansions: usize,
        uniform: bool,
    ) -> Result<Corpus> {
        if n == 0 {
            return Err(Error::InvalidOp("cannot sample 0 strings".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nts = self.nonterminals();
        let mut samples: Vec<(Vec<String>, Count)> = Vec::new();
        let mut consecutive_failures = 0usize;
        let mut drawn = 0usize;
        while drawn < n {
            match self.try_derive(&mut rng, &nts, max_expansions, uniform) {
                Some(tokens) => {
                    samples.push((tokens, count_from_int(1)));
                    drawn += 1;
                    consecutive_failures = 0;
                }
                None => {
                    consecutive_failures += 1;
                    if consecutive_failures >= 1000 {
                        return Err(Error::Sampling(format!(
                            "1000 consecutive derivations exceeded {max_expansions} expansions"
                        )));
                    }
                }
            }
        }
        let tokenization = if self.terminals.iter().all(|t| t.chars().count() == 1) {
            Tokenization::Chars
        } else {
            Tokenization::Words
        };
        Corpus::from_samples(samples, tokenization)
    }

    fn try_derive(
        &self,
        rng: &mut ChaCha8Rng,
        nts: &BTreeSet<String>,
        max_expansions: usize,
        uniform: bool,
    ) -> Option<Vec<String>> {
        #[derive(Clone)]
        enum Piece {
            Nt(String),
            T(String),
        }
        let mut sentential = vec![Piece::Nt(self.start.clone())];
        let mut expansions = 0usize;
        loop {
            let pos = sentential.iter().position(|p| matches!(p, Piece::Nt(_)));
            let Some(pos) = pos else {
                return Some(
                    sentential
                        .into_iter()
                        .map(|p| match p {
                            Piece::T(t) => t,
                            Piece::Nt(_) => unreachable!(),
                        })
                        .collect(),
                );
            };
            expansions += 1;
            if expansions > max_expansions {
                return None;
            }
            let Piece::Nt(nt) = sentential[pos].clone() else { unreachable!() };
            debug_assert!(nts.contains(&nt));
            // Expansion choices in deterministic order: internal first.
            let mut choices: Vec<(Vec<Piece>, f64)> = Vec::new();
            if let Some(rhss) = self.internal.get(&nt) {
                for (rhs, c) in rhss {
                    let pieces = rhs.iter().map(|s| Piece::Nt(s.clone())).collect();
                    choices.push((pieces, if uniform { 1.0 } else { count_to_f64(c) }));
                }
            }
            if let Some(ts) = self.lexical.get(&nt) {
                for (t, c) in ts {
                    choices.push((vec![Piece::T(t.clone())], if uniform { 1.0 } else { count_to_f64(c) }));
                }
            }
            let total: f64 = choices.iter().map(|(_, w)| w).sum();
            if !(total > 0.0) {
                return None; // nonterminal with no productions: dead end
            }
            let mut r = rng.gen_range(0.0..total);
            let mut chosen = choices.len() - 1;
            for (i, (_, w)) in choices.iter().enumerate() {
                if r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            let replacement = choices.swap_remove(chosen).0;
            sentential.splice(pos..=pos, replacement);
        }
    }

    /// Checks the structural invariants: positive counts, no empty or
    /// unit-self productions, lexical terminals within the terminal set,
    /// and every nonterminal reachable from the start symbol.
    pub fn validate(&self) -> Result<()> {
        for (lhs, rhs, c) in self.internal_productions() {
            if rhs.is_empty() {
                return Err(Error::InvalidModel(format!("empty right-hand side for {lhs}")));
            }
            if rhs.len() == 1 && &rhs[0] == lhs {
                return Err(Error::InvalidModel(format!("unit self-production {lhs} -> {lhs}")));
            }
            if !is_positive(c) {
                return Err(Error::InvalidModel(format!("production {lhs} -> {} has count {c}", rhs.join(" "))));
            }
        }
        for (lhs, t, c) in self.lexical_productions() {
            if !is_positive(c) {
                return Err(Error::InvalidModel(format!("production {lhs} => '{t}' has count {c}")));
            }
            if !self.terminals.contains(t) {
                return Err(Error::InvalidModel(format!("terminal {t:?} not in terminal set")));
            }
        }
        let reachable = self.reachable();
        for nt in self.nonterminals() {
            if !reachable.contains(&nt) {
                return Err(Error::InvalidModel(format!("nonterminal {nt} unreachable from {}", self.start)));
            }
        }
        Ok(())
    }

    fn reachable(&self) -> BTreeSet<String> {
        let mut seen = BTreeSet::from([self.start.clone()]);
        let mut queue = VecDeque::from([self.start.clone()]);
        while let Some(nt) = queue.pop_front() {
            if let Some(rhss) = self.internal.get(&nt) {
                for rhs in rhss.keys() {
                    for s in rhs {
                        if seen.insert(s.clone()) {
                            queue.push_back(s.clone());
                        }
                    }
                }
            }
        }
        seen
    }

    /// Deterministic rendering for beam deduplication: nonterminals are
    /// renumbered by breadth-first discovery from the start symbol and
    /// entries sorted.
    pub fn canonical_key(&self) -> String {
        let mut rename: BTreeMap<String, usize> = BTreeMap::new();
        let mut queue: VecDeque<String> = VecDeque::new();
        rename.insert(self.start.clone(), 0);
        queue.push_back(self.start.clone());
        let mut next = 1usize;
        while let Some(nt) = queue.pop_front() {
            if let Some(rhss) = self.internal.get(&nt) {
                let mut prods: Vec<&Vec<String>> = rhss.keys().collect();
                prods.sort_by_key(|rhs| {
                    (
                        rhs.len(),
                        rhs.iter()
                            .map(|s| rename.get(s).copied().unwrap_or(usize::MAX))
                            .collect::<Vec<_>>(),
                        (*rhs).clone(),
                    )
                });
                for rhs in prods {
                    for s in rhs {
                        if !rename.contains_key(s) {
                            rename.insert(s.clone(), next);
                            next += 1;
                            queue.push_back(s.clone());
                        }
                    }
                }
            }
        }
        for nt in self.nonterminals() {
            rename.entry(nt).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            });
        }
        let mut lines: Vec<String> = Vec::new();
        for (lhs, rhs, c) in self.internal_productions() {
            let body: Vec<String> = rhs.iter().map(|s| rename[s].to_string()).collect();
            lines.push(format!("{}>{}#{}", rename[lhs], body.join(","), c));
        }
        for (lhs, t, c) in self.lexical_productions() {
            lines.push(format!("{}>'{}'#{}", rename[lhs], t, c));
        }
        lines.sort();
        lines.join(";")
    }

    /// Serializes in the SCFG text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("start: {}\n", self.start);
        for (lhs, rhs, c) in self.internal_productions() {
            out.push_str(&format!("{lhs} -> {} # {c}\n", rhs.join(" ")));
        }
        for (lhs, t, c) in self.lexical_productions() {
            out.push_str(&format!("{lhs} => '{t}' # {c}\n"));
        }
        out
    }

    /// Parses the SCFG text format. A nonterminal may be declared by an
    /// RHS occurrence alone. Errors carry 1-based line numbers.
    pub fn parse(text: &str) -> Result<Scfg> {
        let mut start: Option<String> = None;
        let mut internal: BTreeMap<String, BTreeMap<Vec<String>, Count>> = BTreeMap::new();
        let mut lexical: BTreeMap<String, BTreeMap<String, Count>> = BTreeMap::new();
        let mut terminals = BTreeSet::new();

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { line, message };
            if let Some(rest) = trimmed.strip_prefix("start:") {
                let name = rest.trim();
                if name.is_empty() {
                    return Err(err("missing start symbol".into()));
                }
                start = Some(name.to_string());
                continue;
            }
            let (body, count_str) = trimmed
                .rsplit_once('#')
                .ok_or_else(|| err("missing '# <count>' suffix".into()))?;
            let count =
                parse_count(count_str).ok_or_else(|| err(format!("bad count {count_str:?}")))?;
            if !is_positive(&count) {
                return Err(err(format!("count must be > 0, got {count}")));
            }
            if let Some((lhs, rhs)) = body.split_once("=>") {
                let lhs = lhs.trim().to_string();
                let t = rhs.trim();
                let t = t
                    .strip_prefix('\'')
                    .and_then(|s| s.strip_suffix('\''))
                    .ok_or_else(|| err(format!("terminal must be quoted, got {t:?}")))?
                    .to_string();
                terminals.insert(t.clone());
                *lexical
                    .entry(lhs)
                    .or_default()
                    .entry(t)
                    .or_insert_with(Count::default) += count;
            } else if let Some((lhs, rhs)) = body.split_once("->") {
                let lhs = lhs.trim().to_string();
                let symbols: Vec<String> = rhs.split_whitespace().map(String::from).collect();
                if symbols.is_empty() {
                    return Err(err(format!("empty right-hand side for {lhs}")));
                }
                if symbols.len() == 1 && symbols[0] == lhs {
                    return Err(err(format!("unit self-production {lhs} -> {lhs}")));
                }
                *internal
                    .entry(lhs)
                    .or_default()
                    .entry(symbols)
                    .or_insert_with(Count::default) += count;
            } else {
                return Err(err(format!("unrecognized line {trimmed:?}")));
            }
        }

        let start = start.ok_or(Error::Parse { line: 1, message: "missing 'start:' line".into() })?;
        // Resume chunk numbering above any existing X<n> names.
        let mut g = Scfg { start, terminals, internal, lexical, next_chunk: 1 };
        let max_x = g
            .nonterminals()
            .iter()
            .filter_map(|nt| nt.strip_prefix('X').and_then(|s| s.parse::<u32>().ok()))
            .max()
            .unwrap_or(0);
        g.next_chunk = max_x + 1;
        Ok(g)
    }
}

fn contains_seq(rhs: &[String], seq: &[String]) -> bool {
    rhs.len() >= seq.len() && (0..=(rhs.len() - seq.len())).any(|i| &rhs[i..i + seq.len()] == seq)
}

/// Replaces maximal left-to-right non-overlapping occurrences of `seq`.
fn replace_seq(rhs: &[String], seq: &[String], name: &str) -> (Vec<String>, usize) {
    let mut out = Vec::with_capacity(rhs.len());
    let mut occurrences = 0usize;
    let mut i = 0usize;
    while i < rhs.len() {
        if i + seq.len() <= rhs.len() && &rhs[i..i + seq.len()] == seq {
            out.push(name.to_string());
            occurrences += 1;
            i += seq.len();
        } else {
            out.push(rhs[i].clone());
            i += 1;
        }
    }
    (out, occurrences)
}

/// Accumulates every concatenation of per-symbol strings whose lengths
/// compose `len` across `rhs`.
fn extend_compositions(
    sets: &BTreeMap<&String, Vec<BTreeSet<Vec<String>>>>,
    rhs: &[String],
    len: usize,
    acc: &mut BTreeSet<Vec<String>>,
) {
    fn rec(
        sets: &BTreeMap<&String, Vec<BTreeSet<Vec<String>>>>,
        rhs: &[String],
        remaining: usize,
        prefix: &mut Vec<String>,
        acc: &mut BTreeSet<Vec<String>>,
    ) {
        if rhs.is_empty() {
            if remaining == 0 {
                acc.insert(prefix.clone());
            }
            return;
        }
        let tail_min = rhs.len() - 1;
        if remaining < 1 + tail_min {
            return;
        }
        let max_here = remaining - tail_min;
        let Some(per_len) = sets.get(&rhs[0]) else { return };
        for here in 1..=max_here {
            for s in &per_len[here - 1] {
                let before = prefix.len();
                prefix.extend(s.iter().cloned());
                rec(sets, &rhs[1..], remaining - here, prefix, acc);
                prefix.truncate(before);
            }
        }
    }
    let mut prefix = Vec::new();
    rec(sets, rhs, len, &mut prefix, acc);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::count::count_from_int;

    fn corpus(text: &str) -> Corpus {
        Corpus::parse(text, Tokenization::Chars).unwrap()
    }

    fn fig_corpus() -> Corpus {
        corpus("ab\naabb\naaabbb")
    }

    fn internal_count(g: &Scfg, lhs: &str, rhs: &[&str]) -> Option<Count> {
        let rhs: Vec<String> = rhs.iter().map(|s| s.to_string()).collect();
        g.internal.get(lhs).and_then(|m| m.get(&rhs)).copied()
    }

    fn strings(set: &BTreeSet<Vec<String>>) -> BTreeSet<String> {
        set.iter().map(|toks| toks.concat()).collect()
    }

    #[test]
    fn incorporation_builds_top_level_and_lexical_rules() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        g.validate().unwrap();
        assert_eq!(internal_count(&g, "S", &["A", "B"]), Some(count_from_int(1)));
        assert_eq!(internal_count(&g, "S", &["A", "A", "B", "B"]), Some(count_from_int(1)));
        assert_eq!(
            internal_count(&g, "S", &["A", "A", "A", "B", "B", "B"]),
            Some(count_from_int(1))
        );
        assert_eq!(g.lexical["A"]["a"], count_from_int(6));
        assert_eq!(g.lexical["B"]["b"], count_from_int(6));
        assert_eq!(g.num_internal(), 3);
        assert_eq!(g.num_lexical(), 2);
    }

    #[test]
    fn incorporation_of_single_token_sample() {
        let g = Scfg::incorporate(&corpus("a")).unwrap();
        assert_eq!(internal_count(&g, "S", &["A"]), Some(count_from_int(1)));
        assert_eq!(g.lexical["A"]["a"], count_from_int(1));
    }

    #[test]
    fn incorporation_weights_consolidated_samples() {
        let g = Scfg::incorporate(&corpus("ab\nab")).unwrap();
        assert_eq!(internal_count(&g, "S", &["A", "B"]), Some(count_from_int(2)));
    }

    #[test]
    fn preterminal_naming_avoids_collisions() {
        let g = Scfg::incorporate(&Corpus::parse("s t (", Tokenization::Words).unwrap()).unwrap();
        let nts = g.nonterminals();
        // "s" cannot take the start symbol's name; "(" is not a letter.
        assert!(nts.contains("T"));
        assert!(nts.contains("T1"));
        assert!(nts.contains("T2"));
    }

    #[test]
    fn chunking_follows_the_two_step_example() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        let g1 = g.chunk_sequence(&["A".into(), "B".into()], "X").unwrap();
        g1.validate().unwrap();
        assert_eq!(internal_count(&g1, "S", &["X"]), Some(count_from_int(1)));
        assert_eq!(internal_count(&g1, "S", &["A", "X", "B"]), Some(count_from_int(1)));
        assert_eq!(
            internal_count(&g1, "S", &["A", "A", "X", "B", "B"]),
            Some(count_from_int(1))
        );
        assert_eq!(internal_count(&g1, "X", &["A", "B"]), Some(count_from_int(3)));

        let g2 = g1.chunk_sequence(&["A".into(), "X".into(), "B".into()], "Y").unwrap();
        g2.validate().unwrap();
        assert_eq!(internal_count(&g2, "S", &["X"]), Some(count_from_int(1)));
        assert_eq!(internal_count(&g2, "S", &["Y"]), Some(count_from_int(1)));
        assert_eq!(internal_count(&g2, "S", &["A", "Y", "B"]), Some(count_from_int(1)));
        assert_eq!(internal_count(&g2, "Y", &["A", "X", "B"]), Some(count_from_int(2)));
        assert_eq!(internal_count(&g2, "X", &["A", "B"]), Some(count_from_int(3)));
    }

    #[test]
    fn merging_reaches_the_recursive_grammar() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        let g = g.chunk_sequence(&["A".into(), "B".into()], "X").unwrap();
        let g = g.chunk_sequence(&["A".into(), "X".into(), "B".into()], "Y").unwrap();
        let g = g.merge_nonterminals("S", "Y").unwrap();
        g.validate().unwrap();
        let g = g.merge_nonterminals("S", "X").unwrap();
        g.validate().unwrap();

        assert_eq!(g.num_internal(), 2);
        assert_eq!(internal_count(&g, "S", &["A", "B"]), Some(count_from_int(3)));
        assert_eq!(internal_count(&g, "S", &["A", "S", "B"]), Some(count_from_int(3)));
        assert_eq!(g.lexical["A"]["a"], count_from_int(6));
        assert_eq!(g.lexical["B"]["b"], count_from_int(6));
        assert!(!g.nonterminals().contains("X"));
        assert!(!g.nonterminals().contains("Y"));
    }

    #[test]
    fn merging_identical_production_sets_consolidates() {
        let g = Scfg::parse("start: S\nS -> A B # 1\nS -> C D # 1\nA => 'a' # 1\nC => 'a' # 1\nB => 'b' # 1\nD => 'b' # 1\n").unwrap();
        let g = g.merge_nonterminals("A", "C").unwrap();
        let g = g.merge_nonterminals("B", "D").unwrap();
        assert_eq!(internal_count(&g, "S", &["A", "B"]), Some(count_from_int(2)));
        assert_eq!(g.lexical["A"]["a"], count_from_int(2));
    }

    #[test]
    fn merge_rejects_degenerate_arguments() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        assert!(g.merge_nonterminals("A", "A").is_err());
        assert!(g.merge_nonterminals("A", "Z").is_err());
        assert!(g.merge_nonterminals("A", "S").is_err());
        assert!(g.merge_nonterminals("S", "A").is_ok());
    }

    #[test]
    fn chunk_replacement_is_left_to_right_non_overlapping() {
        let g = Scfg::parse(
            "start: S\nS -> A A A # 2\nS -> A B # 1\nA => 'a' # 7\nB => 'b' # 1\n",
        )
        .unwrap();
        let g = g.chunk_sequence(&["A".into(), "A".into()], "Z").unwrap();
        assert_eq!(internal_count(&g, "S", &["Z", "A"]), Some(count_from_int(2)));
        assert_eq!(internal_count(&g, "Z", &["A", "A"]), Some(count_from_int(2)));
    }

    #[test]
    fn chunk_rejects_degenerate_arguments() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        assert!(g.chunk_sequence(&["A".into()], "X").is_err());
        assert!(g.chunk_sequence(&["B".into(), "A".into()], "X").is_err());
        assert!(g.chunk_sequence(&["A".into(), "B".into()], "S").is_err());
    }

    #[test]
    fn chunk_auto_numbers_names_deterministically() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        let (g1, n1) = g.chunk_auto(&["A".into(), "B".into()]).unwrap();
        assert_eq!(n1, "X1");
        let (_, n2) = g1.chunk_auto(&["A".into(), "X1".into(), "B".into()]).unwrap();
        assert_eq!(n2, "X2");
    }

    #[test]
    fn viterbi_log_likelihood_of_memorizing_grammar() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        let expected = 3.0 * (1.0f64 / 3.0).ln();
        assert!((g.viterbi_log_likelihood() - expected).abs() < 1e-9);
        assert!((expected - (-3.295837)).abs() < 1e-6);
    }

    #[test]
    fn viterbi_log_likelihood_of_recursive_grammar() {
        let g = Scfg::parse(
            "start: S\nS -> A B # 3\nS -> A S B # 3\nA => 'a' # 6\nB => 'b' # 6\n",
        )
        .unwrap();
        let expected = 6.0 * 0.5f64.ln();
        assert!((g.viterbi_log_likelihood() - expected).abs() < 1e-9);
        assert!((expected - (-4.158883)).abs() < 1e-6);
    }

    #[test]
    fn single_production_grammars_score_zero() {
        let g = Scfg::parse("start: S\nS -> A A # 5\nA => 'a' # 10\n").unwrap();
        assert!((g.viterbi_log_likelihood() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_chunks_use_weighted_overlapping_occurrences() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        let ops = g.candidates(3, count_from_int(2));
        let ab = ScfgOp::Chunk { seq: vec!["A".into(), "B".into()] };
        let aa = ScfgOp::Chunk { seq: vec!["A".into(), "A".into()] };
        assert!(ops.contains(&ab));
        assert!(ops.contains(&aa));
        // 3 nonterminals -> 3 merge pairs.
        let merges = ops.iter().filter(|op| matches!(op, ScfgOp::Merge { .. })).count();
        assert_eq!(merges, 3);
    }

    #[test]
    fn high_occurrence_threshold_leaves_merges_only() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        let ops = g.candidates(3, count_from_int(100));
        assert!(ops.iter().all(|op| matches!(op, ScfgOp::Merge { .. })));
    }

    #[test]
    fn merge_candidates_keep_the_start_symbol() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        for op in g.candidates(2, count_from_int(2)) {
            if let ScfgOp::Merge { keep, drop } = op {
                assert_ne!(drop, "S");
                assert!(keep == "S" || (keep < drop));
            }
        }
    }

    #[test]
    fn enumeration_of_the_recursive_grammar() {
        let g = Scfg::parse(
            "start: S\nS -> A B # 3\nS -> A S B # 3\nA => 'a' # 6\nB => 'b' # 6\n",
        )
        .unwrap();
        let lang = strings(&g.enumerate_language(12));
        let expected: BTreeSet<String> = (1..=6)
            .map(|n| format!("{}{}", "a".repeat(n), "b".repeat(n)))
            .collect();
        assert_eq!(lang, expected);
    }

    #[test]
    fn enumeration_of_center_marked_palindromes() {
        let g = Scfg::parse(
            "start: S\nS -> C # 1\nS -> A S A # 1\nS -> B S B # 1\nA => 'a' # 1\nB => 'b' # 1\nC => 'c' # 1\n",
        )
        .unwrap();
        let lang = strings(&g.enumerate_language(5));
        let mut expected = BTreeSet::new();
        for w in ["", "a", "b", "aa", "ab", "ba", "bb"] {
            let rev: String = w.chars().rev().collect();
            expected.insert(format!("{w}c{rev}"));
        }
        assert_eq!(lang, expected);
    }

    #[test]
    fn enumeration_follows_unit_chains() {
        let g = Scfg::parse("start: S\nS -> A # 1\nA => 'a' # 1\n").unwrap();
        let lang = strings(&g.enumerate_language(3));
        assert_eq!(lang, BTreeSet::from(["a".to_string()]));
    }

    #[test]
    fn enumeration_of_memorizing_grammar_is_the_support() {
        let c = fig_corpus();
        let g = Scfg::incorporate(&c).unwrap();
        assert_eq!(g.enumerate_language(6), c.support());
    }

    #[test]
    fn sampling_is_deterministic_and_consolidates() {
        let g = Scfg::parse("start: S\nS -> A A # 1\nA => 'a' # 1\n").unwrap();
        let c = g.sample_strings(5, 7, 50, false).unwrap();
        assert_eq!(c.samples().len(), 1);
        assert_eq!(c.samples()[0].1, count_from_int(5));

        let g2 = Scfg::parse(
            "start: S\nS -> A B # 3\nS -> A S B # 3\nA => 'a' # 6\nB => 'b' # 6\n",
        )
        .unwrap();
        let c1 = g2.sample_strings(20, 42, 60, false).unwrap();
        let c2 = g2.sample_strings(20, 42, 60, false).unwrap();
        assert_eq!(c1, c2);
        let c3 = g2.sample_strings(20, 43, 60, false).unwrap();
        assert_ne!(c1, c3);
    }

    #[test]
    fn sampling_rejects_hopeless_bounds() {
        let g = Scfg::parse("start: S\nS -> A A # 1\nA => 'a' # 1\n").unwrap();
        assert!(matches!(g.sample_strings(1, 0, 1, false), Err(Error::Sampling(_))));
    }

    #[test]
    fn text_format_round_trips() {
        let g = Scfg::incorporate(&fig_corpus()).unwrap();
        let (g, _) = g.chunk_auto(&["A".into(), "B".into()]).unwrap();
        let text = g.to_text();
        let reloaded = Scfg::parse(&text).unwrap();
        assert_eq!(reloaded, g);
    }

    #[test]
    fn parse_accepts_rhs_only_nonterminals() {
        let g = Scfg::parse("start: S\nS -> A Q # 1\nA => 'a' # 1\n").unwrap();
        assert!(g.nonterminals().contains("Q"));
    }

    #[test]
    fn parse_rejects_bad_counts_and_self_units() {
        let err = Scfg::parse("start: S\nS -> A B # 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = Scfg::parse("start: S\nS -> S # 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn canonical_key_identifies_renamed_grammars() {
        let a = Scfg::parse("start: S\nS -> A B # 3\nS -> A S B # 3\nA => 'a' # 6\nB => 'b' # 6\n")
            .unwrap();
        let b = Scfg::parse("start: S\nS -> P Q # 3\nS -> P S Q # 3\nP => 'a' # 6\nQ => 'b' # 6\n")
            .unwrap();
        assert_eq!(a.canonical_key(), b.canonical_key());
        let c = Scfg::parse("start: S\nS -> B A # 3\nS -> A S B # 3\nA => 'a' # 6\nB => 'b' # 6\n")
            .unwrap();
        assert_ne!(a.canonical_key(), c.canonical_key());
    }
}
