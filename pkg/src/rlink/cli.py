"""Command-line entry points for preprocessing, linking, serving,
short-name model work, analytics reports and the scalability benchmark.

Usage errors exit 2 (click's default); data errors exit 1 after printing
a single machine-readable JSON error line to stderr.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click

from . import report as rpt
from . import shortname as sn
from . import synthdata as sd
from .blocking import BandConfig, scurve_probability
from .entity_store import ATTRIBUTES, DatasetSchema, EntityStore, QueryRecord
from .evalbench import (
    ServiceUnreachable,
    bench,
    blocking_tradeoff,
    evaluate,
    load_truth,
    montecarlo_scurve,
    trivial_baseline,
)
from .pipeline import Linker, LinkerConfig, preprocess
from .scoring import Strategy
from .service import LinkServer, parse_query


def _fail(message: str) -> None:
    click.echo(json.dumps({"error": message}), err=True)
    sys.exit(1)


def data_errors(fn):
    """Convert data-level exceptions into exit 1 with a JSON error line."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (OSError, ValueError, KeyError, ServiceUnreachable) as exc:
            _fail(f"{type(exc).__name__}: {exc}")

    return wrapper


def _load_config(path: str | None) -> LinkerConfig:
    if path:
        return LinkerConfig.load(path)
    return LinkerConfig()


def _parse_schema(columns: str | None, source: str, delimiter: str) -> DatasetSchema:
    if columns:
        mapping = {}
        for pair in columns.split(","):
            col, _, attr = pair.partition("=")
            if not attr:
                attr = col
            mapping[col.strip()] = attr.strip()
        return DatasetSchema(mapping)
    with open(source, encoding="utf-8") as fh:
        header = next(csv.reader(fh, delimiter=delimiter))
    return DatasetSchema({c: c for c in header if c in ATTRIBUTES})


def _parse_configs(text: str) -> list[BandConfig]:
    return [BandConfig.parse(part) for part in text.split(",")]


config_option = click.option(
    "--config", "config_path", envvar="RLINK_CONFIG", default=None,
    help="Run configuration YAML (or RLINK_CONFIG); defaults apply if omitted.")
base_dir_option = click.option(
    "--base-dir", default=".", show_default=True,
    help="Directory holding the preprocessed databases.")


@click.group()
def main():
    """Company record linkage: blocking, scoring, serving, evaluation."""


@main.command("preprocess")
@click.option("--source", required=True, type=click.Path(exists=True),
              help="Delimited reference dataset with a header row.")
@click.option("--out", "out_dir", required=True, help="Output directory.")
@config_option
@click.option("--columns", default=None,
              help="Column mapping col=attr,... (default: header names that "
                   "match record attributes).")
@click.option("--delimiter", default=",", show_default=True)
@data_errors
def preprocess_cmd(source, out_dir, config_path, columns, delimiter):
    """Build the entity and blocking databases from a delimited source."""
    config = _load_config(config_path)
    schema = _parse_schema(columns, source, delimiter)
    with open(source, encoding="utf-8") as fh:
        stats = preprocess(fh, schema, config, out_dir, delimiter)
    click.echo(json.dumps(stats, sort_keys=True))


@main.command("link")
@config_option
@base_dir_option
@click.option("--name", default=None, help="Query company name.")
@click.option("--alt", "alts", multiple=True, help="Alternate name (repeatable).")
@click.option("--street", default=None)
@click.option("--city", default=None)
@click.option("--postal", default=None)
@click.option("--country", default=None)
@click.option("--sic", "sics", multiple=True)
@click.option("--queries", "queries_file", type=click.Path(exists=True),
              default=None, help="JSON-lines file of query objects.")
@click.option("--top-n", type=int, default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--strategy", type=click.Choice([s.value for s in Strategy]),
              default=None)
@data_errors
def link_cmd(config_path, base_dir, name, alts, street, city, postal, country,
             sics, queries_file, top_n, threshold, strategy):
    """Link queries against the preprocessed dataset; JSON lines to stdout."""
    if not name and not queries_file:
        raise click.UsageError("provide --name or --queries")
    config = _load_config(config_path)
    linker = Linker(config, base_dir)

    queries = []
    if name:
        from .entity_store import Address
        addr = Address(street=street, city=city, postal=postal, country=country)
        queries.append(QueryRecord(
            name=name, names_alt=tuple(alts),
            addresses=(addr,) if not addr.is_empty() else (),
            sics=tuple(sics)))
    if queries_file:
        with open(queries_file, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                line = line.strip()
                if line:
                    queries.append(parse_query(json.loads(line), i))

    kwargs = {}
    if top_n is not None:
        kwargs["top_n"] = top_n
    if threshold is not None:
        kwargs["threshold"] = threshold
    if strategy is not None:
        kwargs["strategy"] = Strategy(strategy)
    for query, outcome in zip(queries, linker.link_batch(queries, **kwargs)):
        if isinstance(outcome, Exception):
            click.echo(json.dumps({"query": query.name, "error": str(outcome)}))
            continue
        results, comparisons = outcome
        click.echo(json.dumps({
            "query": query.name,
            "comparisons": comparisons,
            "results": [m.to_dict() for m in results],
        }, sort_keys=True))


@main.command("serve")
@config_option
@base_dir_option
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True, type=int)
@data_errors
def serve_cmd(config_path, base_dir, host, port):
    """Start the batch linkage HTTP service."""
    import logging

    logging.basicConfig(level=logging.INFO)
    server = LinkServer(_load_config(config_path), base_dir, host, port)
    click.echo(json.dumps({"listening": server.address}))
    server.run()


# -- short names ----------------------------------------------------------


@main.group("shortname")
def shortname_group():
    """Train, apply and evaluate the short-name extraction model."""


@shortname_group.command("train")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--freq", required=True, type=click.Path(exists=True))
@click.option("--out", "model_path", required=True)
@click.option("--epochs", default=20, show_default=True, type=int)
@click.option("--report-dir", default=None,
              help="Also render the loss-curve CSV/PNG here.")
@data_errors
def shortname_train(corpus, freq, model_path, epochs, report_dir):
    examples = sn.load_corpus(corpus)
    table = sn.FrequencyTable.load(freq)
    model, losses = sn.train(examples, table, sn.Hyper(epochs=epochs))
    model.write(model_path)
    if report_dir:
        rpt.training_report(losses, report_dir)
    click.echo(json.dumps({
        "examples": len(examples),
        "features": len(model.feature_index),
        "finalLoss": round(losses[-1], 6),
    }))


@shortname_group.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--freq", required=True, type=click.Path(exists=True))
@click.argument("names", nargs=-1, required=True)
@data_errors
def shortname_predict(model_path, freq, names):
    model = sn.ShortNameModel.load(model_path)
    table = sn.FrequencyTable.load(freq)
    for name in names:
        click.echo(json.dumps({
            "name": name,
            "shortName": sn.predict(name, model, table),
        }))


@shortname_group.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--freq", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@data_errors
def shortname_eval(model_path, freq, corpus):
    model = sn.ShortNameModel.load(model_path)
    table = sn.FrequencyTable.load(freq)
    result = sn.evaluate(model, sn.load_corpus(corpus), table)
    click.echo(json.dumps({
        label: {"precision": round(m.precision, 4),
                "recall": round(m.recall, 4),
                "f1": round(m.f1, 4), "support": m.support}
        for label, m in {**result.per_class, "micro": result.micro,
                         "macro": result.macro}.items()
    }, sort_keys=True))


# -- analytics ------------------------------------------------------------


@main.command("scurve")
@click.option("--configs", default="4/10,5/18,6/30", show_default=True)
@click.option("--sims", default="0.5,0.6,0.7,0.8", show_default=True)
@click.option("--montecarlo", is_flag=True,
              help="Add empirical estimates over 2000 trials per cell.")
@click.option("--out", "out_dir", default=None,
              help="Also write the CSV table and figure here.")
@data_errors
def scurve_cmd(configs, sims, montecarlo, out_dir):
    """Print the band retrieval probability table."""
    cfgs = _parse_configs(configs)
    sim_values = [float(s) for s in sims.split(",")]
    header = ["s"] + [str(c) for c in cfgs]
    click.echo("\t".join(header))
    empirical = {}
    for s in sim_values:
        cells = [f"{s:.2f}"]
        for cfg in cfgs:
            p = scurve_probability(s, cfg)
            cell = f"{100 * p:.1f}%"
            if montecarlo:
                emp = montecarlo_scurve(cfg, s, trials=2000, seed=7)
                empirical[(str(cfg), s)] = emp
                cell += f" ({100 * emp:.1f}%)"
            cells.append(cell)
        click.echo("\t".join(cells))
    if out_dir:
        paths = rpt.scurve_report(cfgs, sim_values, out_dir,
                                  empirical=empirical or None)
        click.echo(json.dumps({"written": [str(p) for p in paths]}))


@main.command("eval")
@config_option
@base_dir_option
@click.option("--truth", required=True, type=click.Path(exists=True))
@click.option("--strategies", default="rls,jaccard,trivial", show_default=True,
              help="Comma list of scoring strategies; 'trivial' is the "
                   "exact-lookup baseline.")
@click.option("--out", "out_dir", default=None,
              help="Write the comparison CSV and figure here.")
@data_errors
def eval_cmd(config_path, base_dir, truth, strategies, out_dir):
    """Ground-truth evaluation of one or more matching systems."""
    config = _load_config(config_path)
    linker = Linker(config, base_dir)
    entries = load_truth(truth)
    reports = {}
    for system in strategies.split(","):
        system = system.strip()
        if system == "trivial":
            reports[system] = trivial_baseline(entries, linker.store)
        else:
            reports[system] = evaluate(entries, linker,
                                       strategy=Strategy(system))
    click.echo(json.dumps({k: v.to_dict() for k, v in reports.items()},
                          sort_keys=True))
    if out_dir:
        paths = rpt.eval_report(reports, out_dir)
        click.echo(json.dumps({"written": [str(p) for p in paths]}))


@main.command("tradeoff")
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--truth", required=True, type=click.Path(exists=True))
@config_option
@click.option("--configs", default="4/10,5/18,6/30", show_default=True)
@click.option("--columns", default=None)
@click.option("--work-dir", required=True,
              help="Scratch directory for the per-config databases.")
@click.option("--out", "out_dir", default=None,
              help="Write the tradeoff CSV and figure here.")
@data_errors
def tradeoff_cmd(source, truth, config_path, configs, columns, work_dir, out_dir):
    """Blocking-configuration tradeoff: recall vs index size vs comparisons."""
    config = _load_config(config_path)
    schema = _parse_schema(columns, source, ",")
    entries = load_truth(truth)
    rows = blocking_tradeoff(source, schema, config, _parse_configs(configs),
                             entries, work_dir)
    click.echo(json.dumps([r.to_dict() for r in rows]))
    if out_dir:
        paths = rpt.tradeoff_report(rows, out_dir)
        click.echo(json.dumps({"written": [str(p) for p in paths]}))


@main.command("bench")
@click.option("--endpoint", required=True, help="Service base URL.")
@click.option("--clients", default="1,4,8,12", show_default=True,
              help="Comma list of concurrent client counts.")
@click.option("--requests-per-client", default=10, show_default=True, type=int)
@click.option("--batch-size", default=80, show_default=True, type=int)
@click.option("--queries", "queries_file", required=True,
              type=click.Path(exists=True),
              help="JSON-lines file of query objects to cycle through.")
@click.option("--out", "out_dir", default=None,
              help="Write the bench CSV and figure here.")
@data_errors
def bench_cmd(endpoint, clients, requests_per_client, batch_size, queries_file,
              out_dir):
    """Drive concurrent clients against a running service."""
    with open(queries_file, encoding="utf-8") as fh:
        queries = [json.loads(line) for line in fh if line.strip()]
    if not queries:
        _fail("queries file is empty")
    results = []
    for c in [int(x) for x in clients.split(",")]:
        res = bench(endpoint, c, requests_per_client, queries, batch_size)
        results.append(res)
        click.echo(json.dumps(res.to_row()))
    if out_dir:
        paths = rpt.bench_report(results, out_dir)
        click.echo(json.dumps({"written": [str(p) for p in paths]}))


@main.command("synth")
@click.option("--out", "out_dir", required=True)
@click.option("--records", default=10000, show_default=True, type=int)
@click.option("--matched", default=300, show_default=True, type=int)
@click.option("--unmatched", default=100, show_default=True, type=int)
@click.option("--undecided", default=50, show_default=True, type=int)
@data_errors
def synth_cmd(out_dir, records, matched, unmatched, undecided):
    """Regenerate the bundled synthetic corpus, truth set, gazetteer,
    short-name corpus and frequency table (fixed seeds)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gaz = sd.gen_gazetteer()
    recs = sd.gen_corpus(records, gazetteer=gaz)
    truth = sd.gen_truth(recs, matched, unmatched, undecided)
    corpus = sd.gen_shortname_corpus(recs)
    freq = sn.FrequencyTable()
    for r in recs:
        freq.add_text(r.name)
    sd.write_gazetteer_csv(gaz, out / "gazetteer.csv")
    sd.write_corpus_csv(recs, out / "corpus.csv")
    sd.write_truth_csv(truth, out / "truth.csv")
    sn.write_corpus(corpus, out / "shortname_corpus.txt")
    freq.write(out / "word_freq.tsv")
    click.echo(json.dumps({
        "records": len(recs), "truth": len(truth),
        "shortnameExamples": len(corpus), "gazetteer": len(gaz),
        "out": str(out),
    }))


if __name__ == "__main__":
    main()
