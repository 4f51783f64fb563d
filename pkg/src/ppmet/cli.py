"""Command-line entry point: every pipeline stage as a subcommand.

Data goes to stdout or ``--out``; diagnostics go to stderr. Exit status is 0 on
success, 2 on usage or parse errors and 3 on runtime or oracle failures.
"""
from __future__ import annotations

import functools
import json
import logging
import os
import shlex
import subprocess
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import cluster as cl
from . import fuse as fu
from . import ingest
from . import simkit
from . import tsvad_post as tp
from .ingest import AttributedTranscript, FormatError, Utterance
from .score import TextNormPolicy, cp_cer, der, rover, speaker_texts
from .timeline import Diarization, Segment, SegmentError, speech_union
from .windowing import Prompt, WindowingPolicy, subsegment

log = logging.getLogger("ppmet")

EXIT_USAGE = 2
EXIT_RUNTIME = 3

_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING, "warning": logging.WARNING}


class RuntimeFailure(click.ClickException):
    exit_code = EXIT_RUNTIME


class ParseFailure(click.ClickException):
    exit_code = EXIT_USAGE


def _setup_logging() -> None:
    level = _LEVELS.get(os.environ.get("PPMET_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def expand_flags_from(args: list[str]) -> list[str]:
    """Inline ``--flags-from FILE`` (one flag per line, ``#`` comments allowed)."""
    out: list[str] = []
    it = iter(args)
    for a in it:
        if a == "--flags-from" or a.startswith("--flags-from="):
            path = a.split("=", 1)[1] if "=" in a else next(it, None)
            if path is None:
                raise click.UsageError("--flags-from needs a file")
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as e:
                raise click.UsageError(f"cannot read flags file: {e}") from None
            for line in text.splitlines():
                line = line.strip()
                if line and not line.startswith("#"):
                    out.extend(shlex.split(line))
        else:
            out.append(a)
    return out


class _Group(click.Group):
    def parse_args(self, ctx, args):
        return super().parse_args(ctx, expand_flags_from(list(args)))


def guarded(fn):
    """Map library exceptions onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (FormatError, SegmentError) as e:
            raise ParseFailure(str(e)) from None
        except tp.OracleError as e:
            raise RuntimeFailure(str(e)) from None
        except (cl.ClusteringError, RuntimeError) as e:
            raise RuntimeFailure(str(e)) from None
        except ValueError as e:
            raise ParseFailure(str(e)) from None

    return wrapper


def run_jobs(fn, items, jobs: int) -> list:
    """Ordered map; the result never depends on ``jobs``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def emit(text: str | bytes, out: str | None) -> None:
    if out is None:
        if isinstance(text, bytes):
            sys.stdout.buffer.write(text)
        else:
            click.echo(text, nl=False)
        return
    mode = "wb" if isinstance(text, bytes) else "w"
    kw = {} if isinstance(text, bytes) else {"encoding": "utf-8", "newline": ""}
    with open(out, mode, **kw) as f:
        f.write(text)


def _read_emb(path: str) -> ingest.EmbeddingSequence:
    with open(path, "rb") as f:
        return ingest.read_embeddings(f)


def _read_rttm_one(path: str, session: str) -> Diarization:
    ds = ingest.read_rttm(path)
    return ds.get(session, Diarization(session, ()))


jobs_option = click.option("--jobs", default=1, show_default=True, type=click.IntRange(min=1), help="Parallel sessions.")
out_option = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output file (default stdout).")


def post_options(f):
    f = click.option("--median-width", default=11, show_default=True, type=int)(f)
    f = click.option("--threshold", default=0.5, show_default=True, type=float)(f)
    f = click.option("--min-on", default=0.2, show_default=True, type=float)(f)
    f = click.option("--min-off", default=0.3, show_default=True, type=float)(f)
    return f


def _post_policy(median_width, threshold, min_on, min_off) -> tp.PostPolicy:
    return tp.PostPolicy(median_width, threshold, min_on, min_off)


@click.group(cls=_Group, context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(version=__version__, prog_name="ppmet")
def main():
    """Diarization and speaker-attributed scoring toolkit."""
    _setup_logging()


# ------------------------------------------------------------------ segment


@main.command()
@click.option("--vad", required=True, type=click.Path(exists=True, dir_okay=False), help="VAD regions as RTTM.")
@click.option("--window", default=3.0, show_default=True, type=float)
@click.option("--shift", default=1.5, show_default=True, type=float)
@click.option("--min-window", default=1.5, show_default=True, type=float)
@out_option
@guarded
def segment(vad, window, shift, min_window, out):
    """Cut VAD regions into embedding windows (TSV: session, onset, offset, short)."""
    try:
        policy = WindowingPolicy(window, shift, min_window)
    except ValueError as e:
        raise click.UsageError(str(e)) from None
    rows = []
    for sess, d in sorted(ingest.read_rttm(vad).items()):
        for w in subsegment(speech_union(d), policy):
            short = int(w.duration < policy.min_window - 1e-9)
            rows.append(f"{sess}\t{w.onset:.3f}\t{w.offset:.3f}\t{short}\n")
    emit("".join(rows), out)


# ------------------------------------------------------------------ cluster


def _cluster_one(job):
    path, method, threshold, p, k_max, seed = job
    emb = _read_emb(path)
    if len(emb) == 0:
        raise ValueError(f"{path}: no embeddings")
    a = cl.cosine_affinity(emb.vectors)
    if method == "ahc":
        res = cl.ahc(a, threshold)
    elif len(emb) == 1:
        res = cl.ClusteringResult(1, (0,))
    else:
        res = cl.nme_sc(a, p_candidates=p or None, k_max=k_max, seed=seed)
    d = cl.labels_to_diarization(res, emb.segments, emb.session)
    return emb.session, d, res.diagnostics_tsv()


@main.command()
@click.argument("embeddings", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(["nme-sc", "ahc"]), default="nme-sc", show_default=True)
@click.option("--threshold", type=float, default=None, help="AHC distance threshold (required for ahc).")
@click.option("--p", "p", type=int, multiple=True, help="Restrict NME-SC p candidates (repeatable).")
@click.option("--k-max", default=8, show_default=True, type=int)
@click.option("--seed", type=int, default=None, help="k-means seed (required for nme-sc).")
@click.option("--diagnostics", type=click.Path(dir_okay=False), default=None, help="Write tuning trace TSV here.")
@jobs_option
@out_option
@guarded
def cluster(embeddings, method, threshold, p, k_max, seed, diagnostics, jobs, out):
    """Cluster PPEMB1 windows into an RTTM, one session per input file."""
    if method == "nme-sc" and seed is None:
        raise click.UsageError("--seed is required for nme-sc")
    if method == "ahc" and threshold is None:
        raise click.UsageError("--threshold is required for ahc")
    results = run_jobs(_cluster_one, [(e, method, threshold, tuple(p), k_max, seed) for e in embeddings], jobs)
    ds = {}
    diag = []
    for sess, d, tsv in results:
        if sess in ds:
            raise click.UsageError(f"session {sess!r} appears in more than one input")
        ds[sess] = d
        diag.extend(f"{sess}\t{line}\n" for line in tsv.splitlines())
    emit(ingest.write_rttm(ds), out)
    if diagnostics:
        emit("".join(diag), diagnostics)


# ------------------------------------------------------------------ fuse


def _fuse_one(job):
    ds, weights, rank = job
    return fu.dover_lap(ds, fu.FusionPolicy(weights, rank))


@main.command()
@click.argument("rttms", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", type=str, default=None, help="Comma-separated weights, one per input.")
@click.option("--rank-weighting", is_flag=True, help="Weight inputs by rank instead of uniformly.")
@jobs_option
@out_option
@guarded
def fuse(rttms, weights, rank_weighting, jobs, out):
    """Fuse N diarization RTTMs into one (label mapping then overlap-aware voting)."""
    w = None
    if weights:
        try:
            w = tuple(float(x) for x in weights.split(","))
        except ValueError:
            raise click.UsageError("--weights must be comma-separated numbers") from None
        if len(w) != len(rttms):
            raise click.UsageError(f"{len(w)} weights for {len(rttms)} inputs")
    loaded = [ingest.read_rttm(r) for r in rttms]
    sessions = sorted(set().union(*loaded))
    jobs_in = [([x.get(s, Diarization(s, ())) for x in loaded], w, rank_weighting) for s in sessions]
    fused = run_jobs(_fuse_one, jobs_in, jobs)
    emit(ingest.write_rttm(dict(zip(sessions, fused))), out)


# ------------------------------------------------------------------ prompts


def _prompts_one(job):
    rttm, path, max_speakers = job
    emb = _read_emb(path)
    d = _read_rttm_one(rttm, emb.session)
    return emb.session, tp._initial_prompts(d, emb, max_speakers)


@main.command()
@click.option("--rttm", required=True, type=click.Path(exists=True, dir_okay=False))
@click.argument("embeddings", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--max-speakers", default=4, show_default=True, type=click.IntRange(min=1))
@jobs_option
@click.option("--out", required=True, type=click.Path(), help="Output file, or directory for several inputs.")
@guarded
def prompts(rttm, embeddings, max_speakers, jobs, out):
    """Pool single-speaker windows into unit-norm prompts, zero-padded to --max-speakers."""
    res = run_jobs(_prompts_one, [(rttm, e, max_speakers) for e in embeddings], jobs)
    if len(res) == 1 and not os.path.isdir(out):
        sess, ps = res[0]
        emit(ingest.write_prompts(sess, ps), out)
        return
    os.makedirs(out, exist_ok=True)
    for sess, ps in res:
        emit(ingest.write_prompts(sess, ps), os.path.join(out, f"{sess}.prompts"))


# ------------------------------------------------------------------ tsvad-post


def _post_one(job):
    path, policy = job
    with open(path, "rb") as f:
        m = ingest.read_activity(f)
    return m.session, tp.binarize(tp.smooth(m, policy.median_width), policy)


@main.command("tsvad-post")
@click.argument("matrices", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@post_options
@jobs_option
@out_option
@guarded
def tsvad_post(matrices, median_width, threshold, min_on, min_off, jobs, out):
    """Smooth and binarize PPMAT1 activity matrices into an RTTM."""
    policy = _post_policy(median_width, threshold, min_on, min_off)
    res = run_jobs(_post_one, [(m, policy) for m in matrices], jobs)
    emit(ingest.write_rttm(dict(res)), out)


# ------------------------------------------------------------------ refine


class CommandOracle:
    """Activity oracle that shells out: writes prompts, runs a template, reads PPMAT1."""

    def __init__(self, template: str, workdir: str):
        self.argv = shlex.split(template)
        self.workdir = workdir
        self.calls = 0

    def __call__(self, session, prompts):
        self.calls += 1
        stem = os.path.join(self.workdir, f"{session}.{self.calls}")
        ppath, opath = stem + ".prompts", stem + ".ppmat"
        with open(ppath, "wb") as f:
            f.write(ingest.write_prompts(session, prompts))
        subs = {"prompts": ppath, "out": opath, "session": session}
        argv = [a.format(**subs) for a in self.argv]
        log.debug("oracle: %s", argv)
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(f"oracle command exited {proc.returncode}: {proc.stderr.strip()}")
        try:
            with open(opath, "rb") as f:
                return ingest.read_activity(f)
        except OSError as e:
            raise RuntimeError(f"oracle wrote no output: {e}") from None


def _refine_one(job):
    rttm, path, template, policy, iterations, max_speakers = job
    emb = _read_emb(path)
    d0 = _read_rttm_one(rttm, emb.session)
    with tempfile.TemporaryDirectory(prefix="ppmet-") as tmp:
        d, _, _ = tp.refine(d0, emb, CommandOracle(template, tmp), policy, iterations, max_speakers)
    return emb.session, d


@main.command()
@click.option("--rttm", required=True, type=click.Path(exists=True, dir_okay=False), help="Initial diarization.")
@click.argument("embeddings", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--oracle-cmd", required=True, help="Command template with {prompts} and {out} placeholders.")
@click.option("--iterations", default=1, show_default=True, type=click.IntRange(min=0))
@click.option("--max-speakers", default=4, show_default=True, type=click.IntRange(min=1))
@post_options
@jobs_option
@out_option
@guarded
def refine(rttm, embeddings, oracle_cmd, iterations, max_speakers, median_width, threshold, min_on, min_off, jobs, out):
    """Iterate prompt extraction and an external TS-VAD command."""
    if "{prompts}" not in oracle_cmd or "{out}" not in oracle_cmd:
        raise click.UsageError("--oracle-cmd needs {prompts} and {out} placeholders")
    policy = _post_policy(median_width, threshold, min_on, min_off)
    res = run_jobs(
        _refine_one, [(rttm, e, oracle_cmd, policy, iterations, max_speakers) for e in embeddings], jobs
    )
    emit(ingest.write_rttm(dict(res)), out)


@main.command(hidden=True)
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--prototypes", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--noise", default=0.0, type=float)
@click.option("--seed", required=True, type=int)
@click.option("--frame-shift", default=0.08, type=float)
@click.argument("prompt_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@guarded
def oracle(truth, prototypes, noise, seed, frame_shift, prompt_file, out):
    """Simulated TS-VAD oracle over files (for testing refine)."""
    with open(prompt_file, "rb") as f:
        sess, ps = ingest.read_prompts(f)
    with open(prototypes, "rb") as f:
        _, protos = ingest.read_prompts(f)
    d = _read_rttm_one(truth, sess)
    o = simkit.gen_oracle(d, {p.speaker: p.vector for p in protos}, noise, seed, frame_shift)
    emit(ingest.write_activity(o(sess, ps)), out)


# ------------------------------------------------------------------ scoring


def _der_one(job):
    ref, hyp, collar, overlap = job
    return der(ref, hyp, collar, overlap)


@main.command("score-der")
@click.option("--ref", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--hyp", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--collar", default=0.0, show_default=True, type=click.FloatRange(min=0))
@click.option("--no-overlap", is_flag=True, help="Exclude overlapped reference speech from scoring.")
@jobs_option
@out_option
@guarded
def score_der(ref, hyp, collar, no_overlap, jobs, out):
    """DER per session (TSV: session, miss, fa, confusion, der) plus an ALL row."""
    r, h = ingest.read_rttm(ref), ingest.read_rttm(hyp)
    sessions = sorted(set(r) | set(h))
    items = [(r.get(s, Diarization(s, ())), h.get(s, Diarization(s, ())), collar, not no_overlap) for s in sessions]
    reps = run_jobs(_der_one, items, jobs)
    lines = ["session\tmiss\tfa\tconfusion\tder\n"]
    tot = np.zeros(4)
    for s, rep in zip(sessions, reps):
        lines.append(f"{s}\t{rep.miss:.3f}\t{rep.false_alarm:.3f}\t{rep.confusion:.3f}\t{rep.der:.6f}\n")
        tot += (rep.miss, rep.false_alarm, rep.confusion, rep.total_ref)
    err = tot[:3].sum()
    all_der = err / tot[3] if tot[3] > 0 else (float("inf") if err > 0 else 0.0)
    lines.append(f"ALL\t{tot[0]:.3f}\t{tot[1]:.3f}\t{tot[2]:.3f}\t{all_der:.6f}\n")
    emit("".join(lines), out)


def _cpcer_one(job):
    ref, hyp = job
    return cp_cer(ref, hyp)


@main.command("score-cpcer")
@click.option("--ref", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--hyp", required=True, type=click.Path(exists=True, dir_okay=False))
@jobs_option
@out_option
@guarded
def score_cpcer(ref, hyp, jobs, out):
    """cp-CER per session (TSV: session, S, I, D, ref_chars, cp_cer) plus an ALL row."""
    r, h = ingest.read_transcript(ref), ingest.read_transcript(hyp)
    sessions = sorted(set(r) | set(h))
    empty = lambda s: AttributedTranscript(s, ())  # noqa: E731
    reps = run_jobs(_cpcer_one, [(r.get(s, empty(s)), h.get(s, empty(s))) for s in sessions], jobs)
    lines = ["session\tS\tI\tD\tref_chars\tcp_cer\n"]
    tot = np.zeros(4, dtype=np.int64)
    for s, rep in zip(sessions, reps):
        lines.append(
            f"{s}\t{rep.substitutions}\t{rep.insertions}\t{rep.deletions}\t{rep.ref_chars}\t{rep.cp_cer:.6f}\n"
        )
        tot += (rep.substitutions, rep.insertions, rep.deletions, rep.ref_chars)
    err = int(tot[:3].sum())
    rate = err / tot[3] if tot[3] > 0 else (float("inf") if err else 0.0)
    lines.append(f"ALL\t{tot[0]}\t{tot[1]}\t{tot[2]}\t{tot[3]}\t{rate:.6f}\n")
    emit("".join(lines), out)


def _rover_one(job):
    sess, per_hyp, weights = job
    norm = TextNormPolicy()
    speakers = sorted(set().union(*(t.speakers for t in per_hyp)))
    utts = []
    for spk in speakers:
        texts, spans = [], []
        for t in per_hyp:
            texts.append(list(speaker_texts(t, norm).get(spk, "")))
            spans.extend(u.segment for u in t.utterances if u.speaker == spk)
        text = "".join(rover(texts, weights))
        if text:
            seg = Segment(min(s.onset for s in spans), max(s.offset for s in spans))
            utts.append(Utterance(spk, seg, text))
    return sess, AttributedTranscript(sess, tuple(utts))


@main.command("rover")
@click.argument("transcripts", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", type=str, default=None, help="Comma-separated weights, one per input.")
@jobs_option
@out_option
@guarded
def rover_cmd(transcripts, weights, jobs, out):
    """Character-level ROVER per session and speaker over N transcript TSVs."""
    w = None
    if weights:
        try:
            w = [float(x) for x in weights.split(",")]
        except ValueError:
            raise click.UsageError("--weights must be comma-separated numbers") from None
        if len(w) != len(transcripts):
            raise click.UsageError(f"{len(w)} weights for {len(transcripts)} inputs")
    loaded = [ingest.read_transcript(t) for t in transcripts]
    sessions = sorted(set().union(*loaded))
    items = [(s, [x.get(s, AttributedTranscript(s, ())) for x in loaded], w) for s in sessions]
    emit(ingest.write_transcript(dict(run_jobs(_rover_one, items, jobs))), out)


# ------------------------------------------------------------------ simulate


def _simulate_one(spec: simkit.SessionSpec):
    s = simkit.simulate_session(spec)
    name = s.truth.session
    labels = simkit.speaker_labels(spec.n_speakers)
    act = tp.segments_to_activity(s.truth, 0.08, labels)
    protos = [Prompt(lab, s.prototypes[lab], 1.0) for lab in labels]
    return {
        "session": name,
        "truth": s.truth,
        "emb": ingest.write_embeddings(s.embeddings),
        "act": ingest.write_activity(act),
        "protos": ingest.write_prompts(name, protos),
        "text": simkit.gen_transcript(s.truth, seed=spec.seed),
    }


def _load_specs(path: str) -> list[simkit.SessionSpec]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise click.UsageError(f"invalid spec file: {e}") from None
    raw = raw if isinstance(raw, list) else [raw]
    try:
        specs = [simkit.SessionSpec.from_dict(x) for x in raw]
    except (TypeError, ValueError, AttributeError) as e:
        raise click.UsageError(f"invalid spec: {e}") from None
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise click.UsageError("session names in the spec file must be unique")
    return specs


@main.command()
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@jobs_option
@guarded
def simulate(spec_file, out_dir, jobs):
    """Write a synthetic session bundle: ref.rttm, ref.tsv and per-session PPEMB1/PPMAT1/prototypes."""
    specs = _load_specs(spec_file)
    res = run_jobs(_simulate_one, specs, jobs)
    os.makedirs(out_dir, exist_ok=True)
    emit(ingest.write_rttm({r["session"]: r["truth"] for r in res}), os.path.join(out_dir, "ref.rttm"))
    emit(ingest.write_transcript({r["session"]: r["text"] for r in res}), os.path.join(out_dir, "ref.tsv"))
    for r in res:
        stem = os.path.join(out_dir, r["session"])
        emit(r["emb"], stem + ".ppemb")
        emit(r["act"], stem + ".ppmat")
        emit(r["protos"], stem + ".protos")


if __name__ == "__main__":  # pragma: no cover
    main()
