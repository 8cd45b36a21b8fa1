use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use grammerge::count::Count;
use grammerge::*;
use num_rational::Rational64;

#[derive(Clone, Debug)]
enum TSym {
    T(&'static str),
    N(&'static str),
}

struct TestCfg {
    start: &'static str,
    rules: Vec<(&'static str, Vec<TSym>)>,
}

type Dist = BTreeMap<Vec<String>, Rational64>;

impl TestCfg {
    fn lhs_rule_count(&self, lhs: &str) -> usize {
        self.rules.iter().filter(|(l, _)| *l == lhs).count()
    }

    /// Per nonterminal, per exact length: string -> total probability
    /// under uniform production probabilities.
    fn distributions(&self, cap: usize) -> BTreeMap<&'static str, Vec<Dist>> {
        let nts: BTreeSet<&'static str> = self.rules.iter().map(|(l, _)| *l).collect();
        let mut table: BTreeMap<&'static str, Vec<Dist>> =
            nts.iter().map(|nt| (*nt, vec![Dist::new(); cap + 1])).collect();
        for len in 1..=cap {
            for nt in &nts {
                let p_rule = Rational64::new(1, self.lhs_rule_count(nt) as i64);
                let mut acc = Dist::new();
                for (lhs, rhs) in &self.rules {
                    if lhs != nt {
                        continue;
                    }
                    let mut partial: Vec<(Vec<String>, Rational64, usize)> =
                        vec![(Vec::new(), p_rule, 0)];
                    for sym in rhs {
                        let mut next = Vec::new();
                        for (prefix, prob, used) in &partial {
                            match sym {
                                TSym::T(t) => {
                                    if used + 1 <= len {
                                        let mut s = prefix.clone();
                                        s.push(t.to_string());
                                        next.push((s, *prob, used + 1));
                                    }
                                }
                                TSym::N(n) => {
                                    for sub_len in 1..=(len - used) {
                                        for (s, p) in &table[n][sub_len] {
                                            let mut ext = prefix.clone();
                                            ext.extend(s.iter().cloned());
                                            next.push((ext, prob * p, used + sub_len));
                                        }
                                    }
                                }
                            }
                        }
                        partial = next;
                    }
                    for (s, p, used) in partial {
                        if used == len {
                            *acc.entry(s).or_insert_with(Rational64::default) += p;
                        }
                    }
                }
                table.get_mut(nt).unwrap()[len] = acc;
            }
        }
        table
    }

    fn top_strings(&self, k: usize, cap: usize) -> Vec<(Vec<String>, Rational64)> {
        let table = self.distributions(cap);
        let mut all: Vec<(Vec<String>, Rational64)> = Vec::new();
        for dist in &table[self.start][1..] {
            all.extend(dist.iter().map(|(s, p)| (s.clone(), *p)));
        }
        all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.len().cmp(&b.0.len())).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    fn language(&self, max_len: usize) -> BTreeSet<Vec<String>> {
        let table = self.distributions(max_len);
        let mut lang = BTreeSet::new();
        for dist in &table[self.start][1..] {
            lang.extend(dist.keys().cloned());
        }
        lang
    }
}

fn scaled_corpus(top: &[(Vec<String>, Rational64)], total: i64) -> Corpus {
    let samples: Vec<(Vec<String>, Count)> = top.iter().map(|(s, p)| (s.clone(), *p)).collect();
    Corpus::from_samples(samples, Tokenization::Chars)
        .unwrap()
        .scale_to(Rational64::from_integer(total))
        .unwrap()
}

fn row(name: &str, cfg: &TestCfg, k: usize, cap: usize, widths: &[usize], patiences: &[usize]) {
    let top = cfg.top_strings(k, cap);
    println!("== {name}: top {k} strings:");
    for (s, p) in &top {
        println!("   {:?} p={}", s.concat(), p);
    }
    let corpus = scaled_corpus(&top, 50);
    let target_lang = cfg.language(10);
    for &w in widths {
        for &p in patiences {
            let search = SearchConfig {
                strategy: if w >= 2 { Strategy::Beam } else { Strategy::Greedy },
                beam_width: w,
                patience: p,
                ..SearchConfig::default()
            };
            let t0 = Instant::now();
            let r = induce_scfg(&corpus, &Hyperparams::default(), &search).unwrap();
            let got = r.final_model.enumerate_language(10);
            let ok = got == target_lang;
            println!(
                "   width {w} patience {p}: {} ({} internal, post {:.2}, {:?})",
                if ok { "OK" } else { "MISMATCH" },
                r.final_model.num_internal(),
                r.final_score.log_posterior,
                t0.elapsed()
            );
            if ok {
                return;
            }
        }
    }
}

#[test]
fn table_rows() {
    use TSym::*;
    let parens = TestCfg {
        start: "S",
        rules: vec![
            ("S", vec![T("("), T(")")]),
            ("S", vec![T("("), N("S"), T(")")]),
            ("S", vec![N("S"), N("S")]),
        ],
    };
    row("parens", &parens, 8, 12, &[1, 3, 4, 6, 8, 10], &[4, 8]);

    let a2n = TestCfg {
        start: "S",
        rules: vec![("S", vec![T("a"), T("a")]), ("S", vec![N("S"), N("S")])],
    };
    row("a2n", &a2n, 5, 12, &[1, 3, 4, 6, 8, 10], &[4, 8]);

    let abn = TestCfg {
        start: "S",
        rules: vec![("S", vec![T("a"), T("b")]), ("S", vec![N("S"), N("S")])],
    };
    row("abn", &abn, 5, 12, &[1, 3, 4, 6, 8, 10], &[4, 8]);

    let anbn = TestCfg {
        start: "S",
        rules: vec![("S", vec![T("a"), T("b")]), ("S", vec![T("a"), N("S"), T("b")])],
    };
    row("anbn", &anbn, 5, 12, &[1, 3, 4, 6, 8, 10], &[4, 8]);

    let wcw = TestCfg {
        start: "S",
        rules: vec![
            ("S", vec![T("c")]),
            ("S", vec![T("a"), N("S"), T("a")]),
            ("S", vec![T("b"), N("S"), T("b")]),
        ],
    };
    row("wcw", &wcw, 7, 9, &[3, 4, 6, 8, 10], &[4, 8]);

    let addition = TestCfg {
        start: "S",
        rules: vec![
            ("S", vec![T("a")]),
            ("S", vec![T("b")]),
            ("S", vec![T("("), N("S"), T(")")]),
            ("S", vec![N("S"), T("+"), N("S")]),
        ],
    };
    row("addition", &addition, 23, 9, &[4, 6, 8, 10], &[4, 8]);

    let shape = TestCfg {
        start: "S",
        rules: vec![
            ("S", vec![T("d"), N("Y")]),
            ("S", vec![T("b"), N("Y"), N("S")]),
            ("Y", vec![T("a")]),
            ("Y", vec![T("c"), N("Y")]),
        ],
    };
    row("shape", &shape, 11, 10, &[4, 6, 8, 10], &[4, 8]);
}

#[test]
fn palindromes() {
    use TSym::*;
    let pal = TestCfg {
        start: "S",
        rules: vec![
            ("S", vec![T("a"), T("a")]),
            ("S", vec![T("b"), T("b")]),
            ("S", vec![T("a"), N("S"), T("a")]),
            ("S", vec![T("b"), N("S"), T("b")]),
        ],
    };
    for k in [6usize, 14] {
        let top = pal.top_strings(k, 8);
        println!("== palindromes k={k}:");
        for (s, p) in &top {
            println!("   {:?} p={}", s.concat(), p);
        }
        let corpus = scaled_corpus(&top, 50);
        let target_lang = pal.language(8);
        for w in [3usize, 4, 5, 6, 8, 10] {
            for p in [4usize, 8] {
                let search = SearchConfig {
                    strategy: Strategy::Beam,
                    beam_width: w,
                    patience: p,
                    ..SearchConfig::default()
                };
                let t0 = Instant::now();
                let r = induce_scfg(&corpus, &Hyperparams::default(), &search).unwrap();
                let got = r.final_model.enumerate_language(8);
                let ok = got == target_lang;
                println!(
                    "   width {w} patience {p}: {} ({} internal, post {:.2}, {:?})",
                    if ok { "OK" } else { "MISMATCH" },
                    r.final_model.num_internal(),
                    r.final_score.log_posterior,
                    t0.elapsed()
                );
                if ok {
                    return;
                }
            }
        }
    }
}

#[test]
fn palindromes_mixed() {
    use TSym::*;
    let pal = TestCfg {
        start: "S",
        rules: vec![
            ("S", vec![T("a"), T("a")]),
            ("S", vec![T("b"), T("b")]),
            ("S", vec![T("a"), N("S"), T("a")]),
            ("S", vec![T("b"), N("S"), T("b")]),
        ],
    };
    let target_lang = pal.language(8);
    let variants: Vec<(&str, Vec<&str>)> = vec![
        ("mixed8", vec!["aa", "bb", "abba", "baab", "aabbaa", "abaaba", "babbab", "bbaabb"]),
        ("mixed10", vec!["aa", "bb", "abba", "baab", "aabbaa", "abaaba", "abbbba", "baaaab", "babbab", "bbaabb"]),
        ("full14", vec!["aa", "bb", "aaaa", "abba", "baab", "bbbb", "aaaaaa", "aabbaa", "abaaba", "abbbba", "baaaab", "babbab", "bbaabb", "bbbbbb"]),
    ];
    // probability of w.rev(w) with |w|=k is (1/4)^k under the uniform target
    let prob = |s: &str| Rational64::new(1, 4i64.pow((s.len() / 2) as u32));
    for (name, strings) in variants {
        let samples: Vec<(Vec<String>, Rational64)> = strings
            .iter()
            .map(|s| (s.chars().map(String::from).collect(), prob(s)))
            .collect();
        let corpus = scaled_corpus(&samples, 50);
        println!("== {name}");
        'outer: for w in [3usize, 4, 5, 6, 8, 10] {
            for p in [4usize, 8, 12] {
                let search = SearchConfig {
                    strategy: Strategy::Beam,
                    beam_width: w,
                    patience: p,
                    ..SearchConfig::default()
                };
                let t0 = Instant::now();
                let r = induce_scfg(&corpus, &Hyperparams::default(), &search).unwrap();
                let got = r.final_model.enumerate_language(8);
                let ok = got == target_lang;
                println!(
                    "   width {w} patience {p}: {} ({} internal, post {:.2}, {:?})",
                    if ok { "OK" } else { "MISMATCH" },
                    r.final_model.num_internal(),
                    r.final_score.log_posterior,
                    t0.elapsed()
                );
                if ok {
                    break 'outer;
                }
            }
        }
    }
}

const LANGLEY: &str = "start: S
S -> NP VP # 1
VP -> Verb NP # 1
NP -> Art Noun # 1
NP -> Art Noun RC # 1
RC -> Rel VP # 1
Verb => 'saw' # 1
Verb => 'heard' # 1
Noun => 'cat' # 1
Noun => 'dog' # 1
Noun => 'mouse' # 1
Art => 'a' # 1
Art => 'the' # 1
Rel => 'that' # 1
";

#[test]
fn langley() {
    let target = Scfg::parse(LANGLEY).unwrap();
    // All length-5 sentences: Art Noun Verb Art Noun.
    let mut expected5: BTreeSet<Vec<String>> = BTreeSet::new();
    for a1 in ["a", "the"] {
        for n1 in ["cat", "dog", "mouse"] {
            for v in ["saw", "heard"] {
                for a2 in ["a", "the"] {
                    for n2 in ["cat", "dog", "mouse"] {
                        expected5.insert(vec![a1.into(), n1.into(), v.into(), a2.into(), n2.into()]);
                    }
                }
            }
        }
    }
    assert_eq!(expected5.len(), 72);
    // The target generates nothing else of length <= 8.
    assert_eq!(target.enumerate_language(8), expected5);

    for seed in 0u64..5 {
        let t0 = Instant::now();
        let corpus = target.sample_strings(100, seed, 40, true).unwrap();
        let distinct = corpus.samples().len();
        let maxlen = corpus.max_sample_len();
        let cfg = SearchConfig {
            strategy: Strategy::Beam,
            beam_width: 4,
            ..SearchConfig::default()
        };
        let r = induce_scfg(&corpus, &Hyperparams::default(), &cfg).unwrap();
        let lang8 = r.final_model.enumerate_language(8);
        let weak = lang8 == expected5;
        // Every training string derivable: enumerate far enough.
        let lang_full = r.final_model.enumerate_language(maxlen.min(13));
        let covered = corpus
            .samples()
            .iter()
            .filter(|(s, _)| s.len() <= 13)
            .all(|(s, _)| lang_full.contains(s));
        println!(
            "seed {seed}: distinct {distinct}, maxlen {maxlen}, internal {}, weak8 {weak}, covered<=13 {covered}, post {:.2}, {:?}",
            r.final_model.num_internal(),
            r.final_score.log_posterior,
            t0.elapsed()
        );
        if weak {
            println!("grammar:\n{}", r.final_model.to_text());
        }
    }
}

#[test]
fn frequency_effect() {
    let hyper = Hyperparams::default();
    for m in [1i64, 10, 100] {
        let memorizing = Scfg::parse(&format!(
            "start: S\nS -> A # {m}\nS -> A A # {m}\nS -> A A A # {m}\nS -> A A A A # {m}\nA => 'a' # {}\n",
            10 * m
        ))
        .unwrap();
        let generalizing = Scfg::parse(&format!(
            "start: S\nS -> A # {}\nS -> A S # {}\nA => 'a' # {}\n",
            4 * m,
            6 * m,
            10 * m
        ))
        .unwrap();
        let sm = grammerge::scoring::log_posterior_scfg(&memorizing, &hyper);
        let sg = grammerge::scoring::log_posterior_scfg(&generalizing, &hyper);
        println!(
            "m={m}: mem post {:.3} (prior {:.3}, marg {:.3}) | gen post {:.3} (prior {:.3}, marg {:.3}) | marg gap {:.3}",
            sm.log_posterior, sm.log_prior, sm.log_marginal,
            sg.log_posterior, sg.log_prior, sg.log_marginal,
            sg.log_marginal - sm.log_marginal
        );
    }
}

/// Numeric Dirichlet-multinomial marginal via simplex quadrature, as a
/// ratio of two integrals so no gamma function is involved.
fn numeric_dirmult(counts: &[f64], alpha: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    match counts.len() {
        2 => {
            let f = |c1: f64, c2: f64| {
                move |u: f64| {
                    let s = u.sin();
                    let c = u.cos();
                    // theta = sin^2 u; jacobian 2 sin u cos u
                    s.powf(2.0 * c1 - 1.0) * c.powf(2.0 * c2 - 1.0) * 2.0
                }
            };
            let num = simpson(f(counts[0] + alpha, counts[1] + alpha), 0.0, half_pi, 2000);
            let den = simpson(f(alpha, alpha), 0.0, half_pi, 2000);
            (num / den).ln()
        }
        3 => {
            let integral = |c1: f64, c2: f64, c3: f64| {
                let inner = move |u: f64| {
                    let su = u.sin();
                    let cu = u.cos();
                    let outer = su.powf(2.0 * c1 - 1.0) * cu.powf(2.0 * (c2 + c3) - 1.0) * 2.0;
                    let f_v = move |v: f64| {
                        let sv = v.sin();
                        let cv = v.cos();
                        sv.powf(2.0 * c2 - 1.0) * cv.powf(2.0 * c3 - 1.0) * 2.0
                    };
                    outer * simpson(f_v, 0.0, half_pi, 400)
                };
                simpson(inner, 0.0, half_pi, 400)
            };
            let num = integral(counts[0] + alpha, counts[1] + alpha, counts[2] + alpha);
            let den = integral(alpha, alpha, alpha);
            (num / den).ln()
        }
        _ => unreachable!(),
    }
}

#[test]
fn dirichlet_quadrature_oracle() {
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 1.0, 2.0] {
        for c1 in 0..=4 {
            for c2 in 0..=4 {
                let counts = [c1 as f64, c2 as f64];
                let closed = log_dirichlet_multinomial(&counts, alpha).unwrap();
                let numeric = numeric_dirmult(&counts, alpha);
                let rel = if numeric.abs() > 1e-12 {
                    ((closed - numeric) / numeric).abs()
                } else {
                    (closed - numeric).abs()
                };
                worst = worst.max(rel);
            }
        }
    }
    println!("K=2 worst relative error: {worst:.3e}");
    let mut worst3: f64 = 0.0;
    for alpha in [0.5, 1.0, 2.0] {
        for c1 in 0..=4 {
            for c2 in 0..=4 {
                for c3 in 0..=4 {
                    let counts = [c1 as f64, c2 as f64, c3 as f64];
                    let closed = log_dirichlet_multinomial(&counts, alpha).unwrap();
                    let numeric = numeric_dirmult(&counts, alpha);
                    let rel = if numeric.abs() > 1e-12 {
                        ((closed - numeric) / numeric).abs()
                    } else {
                        (closed - numeric).abs()
                    };
                    worst3 = worst3.max(rel);
                }
            }
        }
    }
    println!("K=3 worst relative error: {worst3:.3e}");
}
