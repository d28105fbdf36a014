use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use lmrescore::decoder::synth::{generate, SynthConfig};
use lmrescore::decoder::{build_lattice, decode_segment_traced, DecoderConfig, EmissionRecord, Fusion, LabelLm};
use lmrescore::formats::{parse_records, RefRecord};
use lmrescore::metrics::{
    avg_paths_per_segment, evaluate, salient_terms, tokenize, EvalItem, EvalReport, SalientTermSet,
};
use lmrescore::rescorer::{nbest, RescoreParams, SegmentRescore, TranscriptRecord, UtteranceRescore};
use lmrescore::scoring::protocol::{serve, Endpoint, ProtocolClient};
use lmrescore::scoring::{log_perplexity_per_word, NGramScorer, ScoreRequest, ScoreResponse, Scorer};
use lmrescore::tuner::{rescore_all, tune, Objective, TuneGrid, TuneItem, TuneOptions, TuneResult};
use lmrescore::Utterance;

use crate::args::*;
use crate::error::{Context, Failure, Outcome};
use crate::io::*;

pub const SCORER_ENV: &str = "RESCORE_SCORER";

pub fn run(command: Command, jobs: usize) -> Outcome {
    if jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    match command {
        Command::Gen(a) => gen(a),
        Command::Decode(a) => decode(a, jobs),
        Command::Rescore(a) => rescore(a, jobs),
        Command::Tune(a) => tune_cmd(a, jobs),
        Command::Apply(a) => apply(a, jobs),
        Command::Eval(a) => eval(a),
        Command::Salient(a) => salient(a),
        Command::Ppl(a) => ppl(a),
        Command::Vectors(a) => vectors(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

enum ScorerSource<'a> {
    NGram(&'a Path, usize),
    Endpoint(Endpoint),
}

fn scorer_source(args: &ScorerArgs) -> Outcome<ScorerSource<'_>> {
    if !(args.scorer_timeout.is_finite() && args.scorer_timeout > 0.0) {
        return Err(Failure::usage("--scorer-timeout must be positive"));
    }
    if let Some(corpus) = &args.ngram_corpus {
        check_input(corpus)?;
        if args.ngram_order == 0 {
            return Err(Failure::usage("--ngram-order must be at least 1"));
        }
        return Ok(ScorerSource::NGram(corpus, args.ngram_order));
    }
    let spec = match &args.scorer {
        Some(s) => s.clone(),
        None => std::env::var(SCORER_ENV).map_err(|_| {
            Failure::usage(format!(
                "no scorer: pass --ngram-corpus or --scorer, or set {SCORER_ENV}"
            ))
        })?,
    };
    if spec.trim().is_empty() {
        return Err(Failure::usage("scorer endpoint is empty"));
    }
    Ok(ScorerSource::Endpoint(Endpoint::parse(&spec)))
}

fn open_scorer(args: &ScorerArgs, source: ScorerSource<'_>) -> Outcome<Arc<dyn Scorer>> {
    Ok(match source {
        ScorerSource::NGram(corpus, order) => Arc::new(train_ngram(corpus, order)?),
        ScorerSource::Endpoint(ep) => {
            let timeout = Duration::from_secs_f64(args.scorer_timeout);
            Arc::new(ProtocolClient::connect(&ep, timeout).context("connecting to scorer")?)
        }
    })
}

fn train_ngram(corpus: &Path, order: usize) -> Outcome<NGramScorer> {
    NGramScorer::train(&read_sentences(corpus)?, order).context(corpus.display())
}

fn gen(a: GenArgs) -> Outcome {
    if !a.out_dir.is_dir() {
        return Err(Failure::usage(format!(
            "output directory `{}` does not exist",
            a.out_dir.display()
        )));
    }
    if a.lm_min_words == 0 || a.lm_min_words > a.lm_max_words {
        return Err(Failure::usage(
            "LM sentence length range must be non-empty and start at 1 or more",
        ));
    }
    let config = SynthConfig {
        vocab_size: a.vocab_size,
        utterances: a.utterances,
        segments: (a.min_segments, a.max_segments),
        words: (a.min_words, a.max_words),
        noise: a.noise,
        max_blanks: a.max_blanks,
        peak: a.peak,
    };
    let corpus = generate(&config, a.seed)?;
    let emissions: Vec<EmissionRecord> = corpus
        .utterances
        .iter()
        .map(|u| EmissionRecord::from_matrices(Some(u.utterance_id.clone()), &u.emissions))
        .collect();
    let refs: Vec<RefRecord> = corpus
        .utterances
        .iter()
        .map(|u| RefRecord {
            doc_id: u.utterance_id.clone(),
            text: u.reference(),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut lm = corpus
        .chain
        .corpus(a.lm_sentences, (a.lm_min_words, a.lm_max_words), &mut rng)
        .join("\n");
    lm.push('\n');
    write_lines(&a.out_dir.join("emissions.jsonl"), &emissions)?;
    write_lines(&a.out_dir.join("refs.jsonl"), &refs)?;
    write_text(&a.out_dir.join("lm_corpus.txt"), &lm)?;
    println!(
        "wrote {} utterances, {} LM sentences to {}",
        corpus.utterances.len(),
        a.lm_sentences,
        a.out_dir.display()
    );
    Ok(())
}

fn pool(jobs: usize) -> Outcome<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(Failure::data)
}

struct Decoded {
    lattices: Utterance,
    trie: Option<Utterance>,
}

fn decode(a: DecodeArgs, jobs: usize) -> Outcome {
    check_input(&a.emissions)?;
    check_output(&a.out)?;
    for p in [&a.refs, &a.label_lm_corpus].into_iter().flatten() {
        check_input(p)?;
    }
    if let Some(p) = &a.transcripts {
        check_output(p)?;
    }
    let fusion = match a.fusion_weight {
        Some(weight) => {
            let source = scorer_source(&a.scorer)?;
            Some(Fusion {
                scorer: open_scorer(&a.scorer, source)?,
                weight,
                ilm_weight: a.fusion_ilm_weight,
            })
        }
        None => None,
    };
    let config = DecoderConfig {
        beam_size: a.beam,
        label_context: a.context,
        merge_states: a.merge_states(),
        label_lm_weight: a.label_lm_weight,
        fusion,
    };

    let records: Vec<EmissionRecord> =
        parse_records(&read_text(&a.emissions)?, "emission file").context(a.emissions.display())?;
    let Some(first) = records.first() else {
        return Err(Failure::data(format!(
            "`{}` holds no emission records",
            a.emissions.display()
        )));
    };
    if let Some(r) = records
        .iter()
        .find(|r| r.vocab != first.vocab || r.blank != first.blank)
    {
        return Err(Failure::data(format!(
            "emission record `{}` has a different vocabulary from the first record",
            r.utterance_id.as_deref().unwrap_or("?")
        )));
    }
    let tokens: Vec<String> = first.vocab.iter().filter(|t| **t != first.blank).cloned().collect();
    let label_lm = match &a.label_lm_corpus {
        None => LabelLm::uniform(&tokens, a.label_lm_order)?,
        Some(p) => {
            let seqs: Vec<Vec<String>> = read_sentences(p)?.iter().map(|s| tokenize(s, false)).collect();
            LabelLm::train(&tokens, &seqs, a.label_lm_order, a.label_lm_alpha).context(p.display())?
        }
    };
    let refs = References::load(a.refs.as_deref(), false)?;

    let width = records.len().to_string().len();
    let decoded: Vec<Decoded> = pool(jobs)?.install(|| {
        records
            .par_iter()
            .enumerate()
            .map(|(i, rec)| {
                let id = rec.utterance_id.clone().unwrap_or_else(|| format!("utt{i:0width$}"));
                decode_record(rec, &id, &label_lm, &config, a.compare, refs.as_ref())
            })
            .collect::<Outcome<Vec<_>>>()
    })?;

    let utts: Vec<Utterance> = decoded.iter().map(|d| d.lattices.clone()).collect();
    write_lines(&a.out, &utts)?;
    let first_pass: Vec<UtteranceRescore> = utts.iter().map(first_pass).collect::<Outcome<_>>()?;
    if let Some(p) = &a.transcripts {
        let records: Vec<TranscriptRecord> = first_pass.iter().map(TranscriptRecord::from).collect();
        write_lines(p, &records)?;
    }

    let label = if config.fusion.is_some() {
        "fusion"
    } else if config.merges() {
        "merged"
    } else {
        "trie"
    };
    let mut rows: Vec<(&str, Vec<Utterance>)> = Vec::new();
    if a.compare && config.merges() {
        rows.push(("trie", decoded.iter().filter_map(|d| d.trie.clone()).collect()));
    }
    rows.push((label, utts));
    let mut out = String::new();
    for (i, (label, lattices)) in rows.iter().enumerate() {
        let block = quality_block(label, lattices, &first_pass, refs.is_some())?;
        let skip = usize::from(i > 0);
        for line in block.lines().skip(skip) {
            out += line;
            out.push('\n');
        }
    }
    print!("{out}");
    Ok(())
}

fn decode_record(
    rec: &EmissionRecord,
    id: &str,
    label_lm: &LabelLm,
    config: &DecoderConfig,
    compare: bool,
    refs: Option<&References>,
) -> Outcome<Decoded> {
    let matrices = rec.matrices().context(format!("utterance `{id}`"))?;
    if matrices.is_empty() {
        return Err(Failure::data(format!("utterance `{id}` has no segments")));
    }
    let mut carried: Vec<String> = Vec::new();
    let mut segments = Vec::with_capacity(matrices.len());
    let mut trie = Vec::new();
    for (s, em) in matrices.iter().enumerate() {
        let seg_id = format!("s{s}");
        let (r, trace) =
            decode_segment_traced(em, label_lm, config, &carried, &seg_id).context(format!("utterance `{id}`"))?;
        if compare {
            trie.push(build_lattice(&trace, false, &seg_id)?);
        }
        carried.extend(r.one_best.iter().cloned());
        segments.push(r.lattice);
    }
    let reference = match refs {
        Some(r) => Some(
            r.raw(id)
                .ok_or_else(|| Failure::data(format!("no reference for utterance `{id}`")))?,
        ),
        None => None,
    };
    let utt = |segments| Utterance {
        utterance_id: id.to_owned(),
        reference: reference.clone(),
        segments,
    };
    Ok(Decoded {
        trie: compare.then(|| utt(trie)),
        lattices: utt(segments),
    })
}

/// The best-`hat` path of every segment, as an unscored transcript.
fn first_pass(utt: &Utterance) -> Outcome<UtteranceRescore> {
    let mut segments = Vec::with_capacity(utt.segments.len());
    let mut transcript = Vec::new();
    for seg in &utt.segments {
        let best = nbest(seg, 1)?;
        transcript.extend(best[0].tokens.iter().cloned());
        segments.push(SegmentRescore {
            segment_id: seg.segment_id.clone(),
            nbest: best,
        });
    }
    Ok(UtteranceRescore {
        utterance_id: utt.utterance_id.clone(),
        transcript,
        segments,
    })
}

fn quality_block(label: &str, lattices: &[Utterance], hyps: &[UtteranceRescore], with_refs: bool) -> Outcome<String> {
    if !with_refs {
        let paths = avg_paths_per_segment(lattices)?;
        return Ok(format!(
            "{:<12} {:>10} {:>8} {:>16}\n{:<12} {:>10} {:>8} {:>16}\n",
            "lattice", "oracle WER", "WER", "#paths/segment", label, "-", "-", paths.rendered
        ));
    }
    let items: Vec<EvalItem<'_>> = lattices
        .iter()
        .zip(hyps)
        .map(|(u, h)| {
            Ok(EvalItem {
                utterance_id: u.utterance_id.clone(),
                doc_id: u.utterance_id.clone(),
                reference: reference_for(u, None, false)?,
                hypothesis: h.transcript.clone(),
                lattices: Some(u),
            })
        })
        .collect::<Outcome<_>>()?;
    Ok(evaluate(&items, None)?.quality_block(label))
}

fn params_from(w: &WeightArgs) -> Outcome<RescoreParams> {
    let (mu, nu) = match &w.params {
        Some(p) => {
            let t: TuneResult =
                serde_json::from_str(&read_text(p)?).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?;
            (t.mu, t.nu)
        }
        None => (w.mu.unwrap_or(0.0), w.nu.unwrap_or(0.0)),
    };
    let params = RescoreParams {
        mu,
        nu,
        nbest: w.nbest,
        context_segments: w.context_segments,
    };
    params.validate()?;
    Ok(params)
}

fn rescore(a: RescoreArgs, jobs: usize) -> Outcome {
    check_input(&a.lattices)?;
    check_output(&a.out)?;
    if let Some(p) = &a.weights.params {
        check_input(p)?;
    }
    let source = scorer_source(&a.scorer)?;
    let params = params_from(&a.weights)?;
    let utts = read_lattices(&a.lattices)?;
    let scorer = open_scorer(&a.scorer, source)?;
    let refs: Vec<&Utterance> = utts.iter().collect();
    let rescored = rescore_all(&refs, &scorer, &params, jobs)?;
    let records: Vec<TranscriptRecord> = rescored.iter().map(TranscriptRecord::from).collect();
    write_lines(&a.out, &records)?;
    println!(
        "rescored {} utterances at mu={} nu={}",
        records.len(),
        params.mu,
        params.nu
    );
    Ok(())
}

fn load_salient(path: &Path) -> Outcome<SalientTermSet> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn tune_cmd(a: TuneArgs, jobs: usize) -> Outcome {
    check_input(&a.lattices)?;
    check_output(&a.out)?;
    for p in [&a.refs, &a.salient, &a.eval_lattices].into_iter().flatten() {
        check_input(p)?;
    }
    if a.objective == ObjectiveArg::Ster && a.salient.is_none() {
        return Err(Failure::usage("the ster objective needs --salient"));
    }
    let default = TuneGrid::default();
    let mu = a.mu_grid.clone().unwrap_or_else(|| default.mu().to_vec());
    let nu = a.nu_grid.clone().unwrap_or_else(|| default.nu().to_vec());
    let grid = if a.no_anchor {
        TuneGrid::without_anchor(mu, nu)?
    } else {
        TuneGrid::new(mu, nu)?
    };
    let base = RescoreParams {
        nbest: a.nbest,
        context_segments: a.context_segments,
        ..RescoreParams::default()
    };
    base.validate()?;
    let source = scorer_source(&a.scorer)?;

    let refs = References::load(a.refs.as_deref(), false)?;
    let salient = a.salient.as_deref().map(load_salient).transpose()?;
    let dev_utts = read_lattices(&a.lattices)?;
    let eval_utts = a.eval_lattices.as_deref().map(read_lattices).transpose()?;
    let dev = tune_items(&dev_utts, refs.as_ref())?;
    let eval = eval_utts.as_deref().map(|u| tune_items(u, refs.as_ref())).transpose()?;

    let scorer = open_scorer(&a.scorer, source)?;
    let objective = match (&a.objective, &salient) {
        (ObjectiveArg::Ster, Some(s)) => Objective::Ster(s),
        _ => Objective::Wer,
    };
    let options = TuneOptions {
        jobs,
        cache: !a.no_cache,
    };
    let mut result = tune(&dev, &scorer, &grid, &base, objective, options)?;
    if let Some(eval) = &eval {
        let params = RescoreParams {
            mu: result.mu,
            nu: result.nu,
            ..base
        };
        result.eval_wer = Some(lmrescore::tuner::apply(eval, &scorer, &params, None, jobs)?.wer);
    }
    write_json(&a.out, &result)?;
    print!("{}", result.table());
    if let Some(w) = result.eval_wer {
        println!("eval WER {:.2}%", 100.0 * w);
    }
    Ok(())
}

fn tune_items<'a>(utts: &'a [Utterance], refs: Option<&References>) -> Outcome<Vec<TuneItem<'a>>> {
    utts.iter()
        .map(|u| {
            Ok(TuneItem {
                utterance: u,
                reference: reference_for(u, refs, false)?,
                doc_id: u.utterance_id.clone(),
            })
        })
        .collect()
}

fn write_report(args: &ReportArgs, report: &EvalReport, label: &str) -> Outcome {
    if let Some(p) = &args.out {
        write_json(p, report)?;
    }
    if let Some(p) = &args.csv {
        write_text(p, &report.to_csv())?;
    }
    let mut out = if report.paths.is_some() {
        report.quality_block(label)
    } else {
        format!("WER {:.1}%\n", 100.0 * report.wer)
    };
    if let Some(s) = report.ster {
        out += &format!("STER {:.1}%\n", 100.0 * s);
    }
    print!("{out}");
    Ok(())
}

fn check_report_paths(args: &ReportArgs) -> Outcome {
    if let Some(p) = &args.salient {
        check_input(p)?;
    }
    for p in [&args.out, &args.csv].into_iter().flatten() {
        check_output(p)?;
    }
    Ok(())
}

fn apply(a: ApplyArgs, jobs: usize) -> Outcome {
    check_input(&a.lattices)?;
    for p in [&a.refs, &a.weights.params].into_iter().flatten() {
        check_input(p)?;
    }
    if let Some(p) = &a.transcripts {
        check_output(p)?;
    }
    check_report_paths(&a.report)?;
    let source = scorer_source(&a.scorer)?;
    let params = params_from(&a.weights)?;
    let lc = a.report.lowercase;
    let refs = References::load(a.refs.as_deref(), lc)?;
    let salient = a.report.salient.as_deref().map(load_salient).transpose()?;
    let utts = read_lattices(&a.lattices)?;
    let references: Vec<Vec<String>> = utts
        .iter()
        .map(|u| reference_for(u, refs.as_ref(), lc))
        .collect::<Outcome<_>>()?;

    let scorer = open_scorer(&a.scorer, source)?;
    let borrowed: Vec<&Utterance> = utts.iter().collect();
    let rescored = rescore_all(&borrowed, &scorer, &params, jobs)?;
    if let Some(p) = &a.transcripts {
        let records: Vec<TranscriptRecord> = rescored.iter().map(TranscriptRecord::from).collect();
        write_lines(p, &records)?;
    }
    let items: Vec<EvalItem<'_>> = utts
        .iter()
        .zip(references)
        .zip(&rescored)
        .map(|((u, reference), r)| EvalItem {
            utterance_id: u.utterance_id.clone(),
            doc_id: u.utterance_id.clone(),
            reference,
            hypothesis: r
                .transcript
                .iter()
                .map(|t| if lc { t.to_lowercase() } else { t.clone() })
                .collect(),
            lattices: Some(u),
        })
        .collect();
    let report = evaluate(&items, salient.as_ref())?;
    write_report(&a.report, &report, "rescored")
}

fn eval(a: EvalArgs) -> Outcome {
    check_input(&a.transcripts)?;
    for p in [&a.refs, &a.lattices].into_iter().flatten() {
        check_input(p)?;
    }
    if a.refs.is_none() && a.lattices.is_none() {
        return Err(Failure::usage("pass --refs, or --lattices with embedded references"));
    }
    check_report_paths(&a.report)?;
    let lc = a.report.lowercase;
    let refs = References::load(a.refs.as_deref(), lc)?;
    let salient = a.report.salient.as_deref().map(load_salient).transpose()?;
    let transcripts: Vec<TranscriptRecord> =
        parse_records(&read_text(&a.transcripts)?, "transcript file").context(a.transcripts.display())?;
    if transcripts.is_empty() {
        return Err(Failure::data(format!(
            "`{}` holds no transcripts",
            a.transcripts.display()
        )));
    }
    let lattices = a.lattices.as_deref().map(read_lattices).transpose()?;

    let mut items = Vec::with_capacity(transcripts.len());
    for t in &transcripts {
        let lat = match &lattices {
            Some(ls) => Some(
                ls.iter()
                    .find(|u| u.utterance_id == t.utterance_id)
                    .ok_or_else(|| Failure::data(format!("no lattices for utterance `{}`", t.utterance_id)))?,
            ),
            None => None,
        };
        let reference = match (&refs, lat) {
            (Some(r), _) => r
                .get(&t.utterance_id)
                .cloned()
                .ok_or_else(|| Failure::data(format!("no reference for utterance `{}`", t.utterance_id)))?,
            (None, Some(u)) => reference_for(u, None, lc)?,
            (None, None) => unreachable!("checked above"),
        };
        items.push(EvalItem {
            utterance_id: t.utterance_id.clone(),
            doc_id: t.utterance_id.clone(),
            reference,
            hypothesis: tokenize(&t.transcript, lc),
            lattices: lat,
        });
    }
    let report = evaluate(&items, salient.as_ref())?;
    write_report(&a.report, &report, "transcripts")
}

fn salient(a: SalientArgs) -> Outcome {
    check_input(&a.refs)?;
    check_output(&a.out)?;
    let docs: Vec<(String, Vec<String>)> = read_refs(&a.refs)?
        .into_iter()
        .map(|r| (r.doc_id, tokenize(&r.text, a.lowercase)))
        .collect();
    let set = salient_terms(&docs, a.fraction)?;
    write_json(&a.out, &set)?;
    let terms: usize = set.documents.values().map(Vec::len).sum();
    println!("{} documents, {} salient terms", set.documents.len(), terms);
    Ok(())
}

fn ppl(a: PplArgs) -> Outcome {
    check_input(&a.text)?;
    let source = scorer_source(&a.scorer)?;
    let texts = read_sentences(&a.text)?;
    let scorer = open_scorer(&a.scorer, source)?;
    let lp = log_perplexity_per_word(&scorer, &texts)?;
    println!(
        "{}",
        json!({ "scorer": scorer.name(), "sentences": texts.len(), "log_ppl_per_word": lp, "ppl": lp.exp() })
    );
    Ok(())
}

/// Requests covering empty and long contexts, unknown and non-ASCII words,
/// and batches of several targets.
fn vector_requests(corpus: &[String]) -> Vec<(String, Vec<String>)> {
    let mut out = Vec::new();
    for s in corpus.iter().take(16) {
        let words: Vec<&str> = s.split_whitespace().collect();
        let cut = words.len() / 2;
        let context = words[..cut].join(" ");
        let tail = words[cut..].join(" ");
        let reversed = words[cut..].iter().rev().copied().collect::<Vec<_>>().join(" ");
        out.push((context, vec![tail, reversed]));
    }
    if let Some(s) = corpus.first() {
        out.push((String::new(), vec![s.clone()]));
    }
    out.push((String::new(), vec![String::new()]));
    out.push(("zzyzx qwv".into(), vec!["unseen words".into(), "qwv".into()]));
    out.push((
        "café crème".into(),
        vec!["naïve façade".into(), "नमस्ते दुनिया".into(), "日本 語".into()],
    ));
    out
}

#[derive(Serialize)]
struct Vector {
    vector_id: String,
    request: ScoreRequest,
    expected: Value,
}

fn vectors(a: VectorsArgs) -> Outcome {
    check_input(&a.corpus)?;
    check_output(&a.out)?;
    let corpus = read_sentences(&a.corpus)?;
    let scorer = NGramScorer::train(&corpus, a.order).context(a.corpus.display())?;
    let mut lines = Vec::new();
    for (i, (context, targets)) in vector_requests(&corpus).into_iter().enumerate() {
        let id = i as u64 + 1;
        let scores = scorer.score(&context, &targets)?;
        let request = ScoreRequest { id, context, targets };
        let expected: Value = serde_json::from_str(&ScoreResponse { id, scores }.to_line()).expect("response is JSON");
        lines.push(Vector {
            vector_id: format!("ngram{}-{id:03}", a.order),
            request,
            expected,
        });
    }
    write_lines(&a.out, &lines)?;
    println!("wrote {} vectors", lines.len());
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Outcome {
    check_input(&a.ngram_corpus)?;
    if a.ngram_order == 0 {
        return Err(Failure::usage("--ngram-order must be at least 1"));
    }
    let scorer = Arc::new(train_ngram(&a.ngram_corpus, a.ngram_order)?);
    let name = format!("lmrescore-ngram{}", a.ngram_order);
    let Some(addr) = a.tcp else {
        let stdin = std::io::stdin();
        let stdout = std::io::stdout();
        return serve(scorer.as_ref(), &name, stdin.lock(), stdout.lock()).map_err(Failure::data);
    };
    let listener = TcpListener::bind(&addr).map_err(|e| Failure::usage(format!("binding {addr}: {e}")))?;
    let local = listener.local_addr().map_err(Failure::data)?;
    println!("listening on {local}");
    std::io::stdout().flush().map_err(Failure::data)?;
    for stream in listener.incoming() {
        let stream = stream.map_err(Failure::data)?;
        let (scorer, name) = (Arc::clone(&scorer), name.clone());
        thread::spawn(move || {
            if let Ok(reader) = stream.try_clone() {
                let _ = serve(scorer.as_ref(), &name, BufReader::new(reader), stream);
            }
        });
    }
    Ok(())
}
