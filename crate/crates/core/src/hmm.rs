//! Hidden Markov models with usage-count bookkeeping.
//!
//! Counts serve double duty: an emission or transition entry exists iff
//! its count is positive, so the count tables *are* the model topology,
//! and they are simultaneously the sufficient statistics for likelihood
//! and marginal computations. Operators transform counts structurally
//! (sums and redirections); paths are never re-derived by parsing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::count::{count_to_f64, is_positive, parse_count, Count};
use crate::error::{Error, Result};

/// An HMM state. `Initial` and `Final` are distinguished non-emitting
/// states; all other states are identified by an integer and emit.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum State {
    Initial,
    Emit(u32),
    Final,
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Initial => write!(f, "^"),
            State::Final => write!(f, "$"),
            State::Emit(id) => write!(f, "{id}"),
        }
    }
}

impl State {
    fn parse(tok: &str) -> Option<State> {
        match tok {
            "^" => Some(State::Initial),
            "$" => Some(State::Final),
            _ => tok.parse().ok().map(State::Emit),
        }
    }
}

/// Operator descriptor used by search traces.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "type", content = "args", rename_all = "snake_case")]
pub enum HmmOp {
    Merge { q1: u32, q2: u32 },
}

#[derive(Clone, Debug)]
pub struct Hmm {
    alphabet: BTreeSet<String>,
    /// Emitting state -> symbol -> count. An entry exists iff count > 0.
    emissions: BTreeMap<u32, BTreeMap<String, Count>>,
    /// State -> successor -> count. An entry exists iff count > 0.
    transitions: BTreeMap<State, BTreeMap<State, Count>>,
    next_state: u32,
}

/// Equality over the model content; the fresh-state counter is
/// bookkeeping and not part of it.
impl PartialEq for Hmm {
    fn eq(&self, other: &Self) -> bool {
        self.alphabet == other.alphabet
            && self.emissions == other.emissions
            && self.transitions == other.transitions
    }
}

impl Hmm {
    /// Builds the sample-memorizing model: one fresh chain of states per
    /// distinct sample, weighted by the sample count. The result assigns
    /// each sample its relative frequency, the highest likelihood any
    /// model can reach on the sample multiset.
    pub fn incorporate(corpus: &Corpus) -> Result<Hmm> {
        if corpus.samples().is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut hmm = Hmm {
            alphabet: corpus.alphabet().clone(),
            emissions: BTreeMap::new(),
            transitions: BTreeMap::new(),
            next_state: 1,
        };
        for (tokens, count) in corpus.samples() {
            hmm.add_sample(tokens, *count);
        }
        Ok(hmm)
    }

    /// Adds one sample as a fresh chain between `Initial` and `Final`.
    pub fn add_sample(&mut self, tokens: &[String], count: Count) {
        let mut prev = State::Initial;
        for tok in tokens {
            let id = self.next_state;
            self.next_state += 1;
            self.alphabet.insert(tok.clone());
            *self
                .emissions
                .entry(id)
                .or_default()
                .entry(tok.clone())
                .or_insert_with(Count::default) += count;
            *self
                .transitions
                .entry(prev)
                .or_default()
                .entry(State::Emit(id))
                .or_insert_with(Count::default) += count;
            prev = State::Emit(id);
        }
        *self
            .transitions
            .entry(prev)
            .or_default()
            .entry(State::Final)
            .or_insert_with(Count::default) += count;
    }

    /// An HMM with no states yet; used by builders that lay out states
    /// themselves (word classes).
    pub(crate) fn empty_with_alphabet(alphabet: BTreeSet<String>, next_state: u32) -> Hmm {
        Hmm { alphabet, emissions: BTreeMap::new(), transitions: BTreeMap::new(), next_state }
    }

    pub(crate) fn bump_emission(&mut self, state: u32, sym: &str, count: Count) {
        *self
            .emissions
            .entry(state)
            .or_default()
            .entry(sym.to_string())
            .or_insert_with(Count::default) += count;
    }

    pub(crate) fn bump_transition(&mut self, from: State, to: State, count: Count) {
        *self
            .transitions
            .entry(from)
            .or_default()
            .entry(to)
            .or_insert_with(Count::default) += count;
    }

    pub fn alphabet(&self) -> &BTreeSet<String> {
        &self.alphabet
    }

    /// Identifiers of the emitting states.
    pub fn emitting_states(&self) -> Vec<u32> {
        self.emissions.keys().copied().collect()
    }

    /// Total number of states including `Initial` and `Final`.
    pub fn num_states(&self) -> usize {
        self.emissions.len() + 2
    }

    pub fn num_transition_entries(&self) -> usize {
        self.transitions.values().map(|t| t.len()).sum()
    }

    pub fn num_emission_entries(&self) -> usize {
        self.emissions.values().map(|t| t.len()).sum()
    }

    pub fn emission_table(&self, state: u32) -> Option<&BTreeMap<String, Count>> {
        self.emissions.get(&state)
    }

    pub fn transition_table(&self, state: State) -> Option<&BTreeMap<State, Count>> {
        self.transitions.get(&state)
    }

    pub fn emission_tables(&self) -> impl Iterator<Item = (u32, &BTreeMap<String, Count>)> {
        self.emissions.iter().map(|(s, t)| (*s, t))
    }

    pub fn transition_tables(&self) -> impl Iterator<Item = (State, &BTreeMap<State, Count>)> {
        self.transitions.iter().map(|(s, t)| (*s, t))
    }

    /// States with an edge into `state`.
    pub fn predecessors(&self, state: State) -> BTreeSet<State> {
        self.transitions
            .iter()
            .filter(|(_, tos)| tos.contains_key(&state))
            .map(|(from, _)| *from)
            .collect()
    }

    /// Replaces two emitting states by one that inherits the union of
    /// their transitions and emissions. The surviving state keeps the
    /// identifier of `q1`; by convention callers pass the smaller one
    /// first. A former `q1 <-> q2` transition becomes a self-loop.
    pub fn merge_states(&self, q1: State, q2: State) -> Result<Hmm> {
        let (keep, drop) = match (q1, q2) {
            (State::Emit(a), State::Emit(b)) => (a, b),
            _ => {
                return Err(Error::InvalidOp(
                    "cannot merge the initial or final state".into(),
                ))
            }
        };
        if keep == drop {
            return Err(Error::InvalidOp(format!("cannot merge state {keep} with itself")));
        }
        if !self.emissions.contains_key(&keep) || !self.emissions.contains_key(&drop) {
            return Err(Error::InvalidOp(format!("unknown state in merge ({keep}, {drop})")));
        }

        let redirect = |s: State| if s == State::Emit(drop) { State::Emit(keep) } else { s };

        let mut emissions: BTreeMap<u32, BTreeMap<String, Count>> = BTreeMap::new();
        for (state, table) in &self.emissions {
            let target = if *state == drop { keep } else { *state };
            let entry = emissions.entry(target).or_default();
            for (sym, c) in table {
                *entry.entry(sym.clone()).or_insert_with(Count::default) += *c;
            }
        }

        let mut transitions: BTreeMap<State, BTreeMap<State, Count>> = BTreeMap::new();
        for (from, tos) in &self.transitions {
            let f = redirect(*from);
            let entry = transitions.entry(f).or_default();
            for (to, c) in tos {
                *entry.entry(redirect(*to)).or_insert_with(Count::default) += *c;
            }
        }

        Ok(Hmm {
            alphabet: self.alphabet.clone(),
            emissions,
            transitions,
            next_state: self.next_state,
        })
    }

    /// Log likelihood of the tracked paths under maximum-likelihood
    /// parameters: the sum over every multinomial (each state's outgoing
    /// transitions, each emitting state's emissions) of
    /// `sum_j n_j * ln(n_j / n)`, with `0 ln 0 = 0`.
    pub fn viterbi_log_likelihood(&self) -> f64 {
        let mut ll = 0.0;
        for table in self.transitions.values() {
            ll += table_log_likelihood(table.values());
        }
        for table in self.emissions.values() {
            ll += table_log_likelihood(table.values());
        }
        ll
    }

    /// Unordered pairs of emitting states, in numeric order. With
    /// `prune` set, only pairs sharing an emitted symbol or a
    /// predecessor state are kept.
    pub fn merge_candidates(&self, prune: bool) -> Vec<(u32, u32)> {
        let ids = self.emitting_states();
        let mut pairs = Vec::new();
        if !prune {
            for i in 0..ids.len() {
                for j in (i + 1)..ids.len() {
                    pairs.push((ids[i], ids[j]));
                }
            }
            return pairs;
        }
        let mut preds: BTreeMap<u32, BTreeSet<State>> = BTreeMap::new();
        for (from, tos) in &self.transitions {
            for to in tos.keys() {
                if let State::Emit(t) = to {
                    preds.entry(*t).or_default().insert(*from);
                }
            }
        }
        let empty_preds = BTreeSet::new();
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                let (a, b) = (ids[i], ids[j]);
                let share_symbol = self.emissions[&a]
                    .keys()
                    .any(|sym| self.emissions[&b].contains_key(sym));
                let pa = preds.get(&a).unwrap_or(&empty_preds);
                let pb = preds.get(&b).unwrap_or(&empty_preds);
                let share_pred = pa.intersection(pb).next().is_some();
                if share_symbol || share_pred {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }

    /// All strings of length `<= max_len` with a nonzero-probability
    /// path, as token sequences.
    pub fn enumerate_language(&self, max_len: usize) -> BTreeSet<Vec<String>> {
        let mut result = BTreeSet::new();
        if max_len == 0 {
            return result;
        }
        // frontier: emitting state -> strings of the current length that
        // reach it.
        let mut frontier: BTreeMap<u32, BTreeSet<Vec<String>>> = BTreeMap::new();
        if let Some(tos) = self.transitions.get(&State::Initial) {
            for to in tos.keys() {
                if let State::Emit(s) = to {
                    let entry = frontier.entry(*s).or_default();
                    for sym in self.emissions[s].keys() {
                        entry.insert(vec![sym.clone()]);
                    }
                }
            }
        }
        for _len in 1..=max_len {
            for (s, strings) in &frontier {
                if self
                    .transitions
                    .get(&State::Emit(*s))
                    .map(|t| t.contains_key(&State::Final))
                    .unwrap_or(false)
                {
                    result.extend(strings.iter().cloned());
                }
            }
            let mut next: BTreeMap<u32, BTreeSet<Vec<String>>> = BTreeMap::new();
            for (s, strings) in &frontier {
                if let Some(tos) = self.transitions.get(&State::Emit(*s)) {
                    for to in tos.keys() {
                        if let State::Emit(t) = to {
                            let entry = next.entry(*t).or_default();
                            for sym in self.emissions[t].keys() {
                                for string in strings {
                                    let mut extended = string.clone();
                                    extended.push(sym.clone());
                                    entry.insert(extended);
                                }
                            }
                        }
                    }
                }
            }
            frontier = next;
        }
        result
    }

    /// Checks the structural invariants: flow conservation of counts at
    /// every emitting state, no edges into `Initial` or out of `Final`,
    /// positive counts, and reachability in both directions.
    pub fn validate(&self) -> Result<()> {
        if self.emissions.is_empty() {
            return Err(Error::InvalidModel("no emitting states".into()));
        }
        if self.transitions.contains_key(&State::Final) {
            return Err(Error::InvalidModel("final state has outgoing transitions".into()));
        }
        let mut incoming: BTreeMap<State, Count> = BTreeMap::new();
        for (from, tos) in &self.transitions {
            if !matches!(from, State::Initial) && !self.emissions.contains_key(&from_id(from)?) {
                return Err(Error::InvalidModel(format!("transition from unknown state {from}")));
            }
            for (to, c) in tos {
                if *to == State::Initial {
                    return Err(Error::InvalidModel("initial state has incoming transitions".into()));
                }
                if !is_positive(c) {
                    return Err(Error::InvalidModel(format!("transition {from} -> {to} has count {c}")));
                }
                if let State::Emit(t) = to {
                    if !self.emissions.contains_key(t) {
                        return Err(Error::InvalidModel(format!("transition into unknown state {to}")));
                    }
                }
                *incoming.entry(*to).or_insert_with(Count::default) += *c;
            }
        }
        for (state, table) in &self.emissions {
            if table.is_empty() {
                return Err(Error::InvalidModel(format!("state {state} has no emissions")));
            }
            for (sym, c) in table {
                if !is_positive(c) {
                    return Err(Error::InvalidModel(format!("emission {state}:{sym} has count {c}")));
                }
                if !self.alphabet.contains(sym) {
                    return Err(Error::InvalidModel(format!("emitted symbol {sym:?} not in alphabet")));
                }
            }
            let emit_total: Count = table.values().copied().sum();
            let out_total: Count = self
                .transitions
                .get(&State::Emit(*state))
                .map(|t| t.values().copied().sum())
                .unwrap_or_default();
            let in_total = incoming.get(&State::Emit(*state)).copied().unwrap_or_default();
            if emit_total != out_total || emit_total != in_total {
                return Err(Error::InvalidModel(format!(
                    "count flow broken at state {state}: in {in_total}, emit {emit_total}, out {out_total}"
                )));
            }
        }
        // Forward reachability from Initial, backward from Final.
        let forward = self.reachable_from(State::Initial, false);
        let backward = self.reachable_from(State::Final, true);
        for state in self.emissions.keys() {
            if !forward.contains(&State::Emit(*state)) {
                return Err(Error::InvalidModel(format!("state {state} unreachable from initial")));
            }
            if !backward.contains(&State::Emit(*state)) {
                return Err(Error::InvalidModel(format!("state {state} cannot reach final")));
            }
        }
        Ok(())
    }

    fn reachable_from(&self, start: State, reverse: bool) -> BTreeSet<State> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(state) = queue.pop_front() {
            let nexts: Vec<State> = if reverse {
                self.transitions
                    .iter()
                    .filter(|(_, tos)| tos.contains_key(&state))
                    .map(|(from, _)| *from)
                    .collect()
            } else {
                self.transitions
                    .get(&state)
                    .map(|tos| tos.keys().copied().collect())
                    .unwrap_or_default()
            };
            for next in nexts {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }

    /// A deterministic rendering used to deduplicate equivalent beam
    /// members: states are renumbered by breadth-first discovery order
    /// from `Initial` (successors visited in emission-signature order)
    /// and all entries are sorted.
    pub fn canonical_key(&self) -> String {
        let mut rename: BTreeMap<u32, u32> = BTreeMap::new();
        let mut queue: VecDeque<u32> = VecDeque::new();
        let mut next = 0u32;

        let signature = |s: &State| -> String {
            match s {
                State::Emit(id) => self
                    .emissions
                    .get(id)
                    .map(|t| {
                        t.iter()
                            .map(|(sym, c)| format!("{sym}:{c}"))
                            .collect::<Vec<_>>()
                            .join(",")
                    })
                    .unwrap_or_default(),
                other => other.to_string(),
            }
        };

        let visit = |state: &State,
                         rename: &mut BTreeMap<u32, u32>,
                         queue: &mut VecDeque<u32>,
                         next: &mut u32| {
            if let State::Emit(id) = state {
                if !rename.contains_key(id) {
                    rename.insert(*id, *next);
                    *next += 1;
                    queue.push_back(*id);
                }
            }
        };

        let order_successors = |from: State,
                                    rename: &mut BTreeMap<u32, u32>,
                                    queue: &mut VecDeque<u32>,
                                    next: &mut u32| {
            if let Some(tos) = self.transitions.get(&from) {
                let mut succs: Vec<State> = tos.keys().copied().collect();
                succs.sort_by_key(|s| (signature(s), *s));
                for s in succs {
                    visit(&s, rename, queue, next);
                }
            }
        };

        order_successors(State::Initial, &mut rename, &mut queue, &mut next);
        while let Some(id) = queue.pop_front() {
            order_successors(State::Emit(id), &mut rename, &mut queue, &mut next);
        }
        for id in self.emissions.keys() {
            if !rename.contains_key(id) {
                rename.insert(*id, next);
                next += 1;
            }
        }

        let map_state = |s: &State| -> String {
            match s {
                State::Emit(id) => rename[id].to_string(),
                other => other.to_string(),
            }
        };
        let mut emit_lines: Vec<String> = self
            .emissions
            .iter()
            .map(|(s, t)| {
                let body: Vec<String> = t.iter().map(|(sym, c)| format!("{sym}:{c}")).collect();
                format!("{}={}", rename[s], body.join(","))
            })
            .collect();
        emit_lines.sort();
        let mut trans_lines: Vec<String> = Vec::new();
        for (from, tos) in &self.transitions {
            for (to, c) in tos {
                trans_lines.push(format!("{}>{}:{}", map_state(from), map_state(to), c));
            }
        }
        trans_lines.sort();
        format!("E[{}]T[{}]", emit_lines.join(";"), trans_lines.join(";"))
    }

    /// Serializes in the HMM text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let alpha: Vec<&str> = self.alphabet.iter().map(|s| s.as_str()).collect();
        out.push_str(&format!("hmm alphabet: {}\n", alpha.join(" ")));
        for (state, table) in &self.emissions {
            let body: Vec<String> = table.iter().map(|(sym, c)| format!("{sym}:{c}")).collect();
            out.push_str(&format!("state {state} emit {}\n", body.join(" ")));
        }
        for (from, tos) in &self.transitions {
            for (to, c) in tos {
                out.push_str(&format!("trans {from} -> {to} : {c}\n"));
            }
        }
        out
    }

    /// Parses the HMM text format. Errors carry 1-based line numbers.
    pub fn parse(text: &str) -> Result<Hmm> {
        let mut alphabet: Option<BTreeSet<String>> = None;
        let mut emissions: BTreeMap<u32, BTreeMap<String, Count>> = BTreeMap::new();
        let mut transitions: BTreeMap<State, BTreeMap<State, Count>> = BTreeMap::new();
        let mut max_id = 0u32;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { line, message };
            if let Some(rest) = trimmed.strip_prefix("hmm alphabet:") {
                alphabet = Some(rest.split_whitespace().map(String::from).collect());
            } else if let Some(rest) = trimmed.strip_prefix("state ") {
                let (id_str, emit_part) = rest
                    .split_once(" emit ")
                    .ok_or_else(|| err("expected 'state <id> emit <sym>:<count> ...'".into()))?;
                let id: u32 = id_str
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad state id {id_str:?}")))?;
                max_id = max_id.max(id);
                let table = emissions.entry(id).or_default();
                for item in emit_part.split_whitespace() {
                    let (sym, count_str) = item
                        .rsplit_once(':')
                        .ok_or_else(|| err(format!("bad emission entry {item:?}")))?;
                    let count = parse_count(count_str)
                        .ok_or_else(|| err(format!("bad count {count_str:?}")))?;
                    if !is_positive(&count) {
                        return Err(err(format!("count must be > 0, got {count}")));
                    }
                    *table.entry(sym.to_string()).or_insert_with(Count::default) += count;
                }
            } else if let Some(rest) = trimmed.strip_prefix("trans ") {
                let (ends, count_str) = rest
                    .rsplit_once(':')
                    .ok_or_else(|| err("expected 'trans <from> -> <to> : <count>'".into()))?;
                let (from_str, to_str) = ends
                    .split_once("->")
                    .ok_or_else(|| err("expected '<from> -> <to>'".into()))?;
                let from = State::parse(from_str.trim())
                    .ok_or_else(|| err(format!("bad state {from_str:?}")))?;
                let to =
                    State::parse(to_str.trim()).ok_or_else(|| err(format!("bad state {to_str:?}")))?;
                let count =
                    parse_count(count_str).ok_or_else(|| err(format!("bad count {count_str:?}")))?;
                if !is_positive(&count) {
                    return Err(err(format!("count must be > 0, got {count}")));
                }
                if let State::Emit(id) = from {
                    max_id = max_id.max(id);
                }
                if let State::Emit(id) = to {
                    max_id = max_id.max(id);
                }
                *transitions
                    .entry(from)
                    .or_default()
                    .entry(to)
                    .or_insert_with(Count::default) += count;
            } else {
                return Err(err(format!("unrecognized line {trimmed:?}")));
            }
        }

        let alphabet = alphabet.ok_or(Error::Parse {
            line: 1,
            message: "missing 'hmm alphabet:' header".into(),
        })?;
        let hmm = Hmm { alphabet, emissions, transitions, next_state: max_id + 1 };
        hmm.validate()?;
        Ok(hmm)
    }
}

fn from_id(state: &State) -> Result<u32> {
    match state {
        State::Emit(id) => Ok(*id),
        other => Err(Error::InvalidModel(format!("expected emitting state, got {other}"))),
    }
}

/// `sum_j n_j ln(n_j / n)` over one count table, with `0 ln 0 = 0`.
pub(crate) fn table_log_likelihood<'a>(counts: impl Iterator<Item = &'a Count>) -> f64 {
    let counts: Vec<f64> = counts.map(count_to_f64).collect();
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|c| **c > 0.0)
        .map(|c| c * (c / total).ln())
        .sum()
}
