"""Command-line entry points.

    pubbie serve        run the HTTP service
    pubbie ingest       offline CSV ingest with program prediction
    pubbie train-nb     fit the bag-of-words model, print test metrics
    pubbie train-head   fit the linear head from cached embeddings
    pubbie eval-nl2sql  score the text-to-SQL pipeline on a case corpus
    pubbie chat         interactive console session
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import classifier
from .config import Config, load_config
from .errors import PubbieError, TooSmallError
from .llm import CacheEmbedder
from .orchestrator import evaluate_text_to_sql, load_cases
from .service import build_orchestrator, create_app, make_labeler
from .store import Database, PublicationStore


def _load_config(args: argparse.Namespace) -> Config:
    return load_config(args.config)


def _labeled_corpus(csv_path: str) -> list[tuple[str, str]]:
    """(feature text, label) pairs for the GROUND_TRUTH rows of a CSV."""
    store = PublicationStore(Database(":memory:"))
    report = store.ingest_csv(Path(csv_path).read_bytes())
    if report.errors:
        print(f"warning: {len(report.errors)} rows skipped", file=sys.stderr)
    corpus = [
        (classifier.render_features(pub), pub.prog)
        for pub in store.iter_publications()
        if pub.prog_source == "GROUND_TRUTH"
    ]
    return corpus


def _print_metrics(metrics: classifier.EvalMetrics) -> None:
    print(f"accuracy: {metrics.accuracy:.2f}")
    print(f"macro precision: {metrics.macro_precision:.2f}")
    print(f"macro recall: {metrics.macro_recall:.2f}")
    print(f"macro f1: {metrics.macro_f1:.2f}")


def _split_corpus(corpus: list, seed: int):
    if len(corpus) < 13:
        raise TooSmallError(
            f"need at least 13 labeled publications, found {len(corpus)}"
        )
    split = classifier.make_split(len(corpus), seed)
    print(
        f"labeled publications: {len(corpus)} "
        f"(train {len(split.train)} / val {len(split.val)} / test {len(split.test)})"
    )
    return split


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    config = _load_config(args)
    app = create_app(config, debug=args.debug)
    host, _, port = config.server_bind_addr.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _load_config(args)
    store = PublicationStore(Database(config.store_path))
    report = store.ingest_csv(Path(args.csv).read_bytes(), labeler=make_labeler(config))
    print(report.summary())
    return 0


def cmd_train_nb(args: argparse.Namespace) -> int:
    config = _load_config(args)
    corpus = _labeled_corpus(args.csv)
    split = _split_corpus(corpus, args.seed)
    model = classifier.train_naive_bayes(
        [corpus[i] for i in split.train], alpha=args.alpha
    )
    predictions = [classifier.predict_nb(model, corpus[i][0])[0] for i in split.test]
    gold = [corpus[i][1] for i in split.test]
    _print_metrics(classifier.evaluate(predictions, gold))
    out = args.out or config.classifier_model_path
    if out:
        classifier.save_nb_model(model, out)
        print(f"model saved to {out}")
    return 0


def cmd_train_head(args: argparse.Namespace) -> int:
    config = _load_config(args)
    corpus = _labeled_corpus(args.csv)
    split = _split_corpus(corpus, args.seed)
    embedder = CacheEmbedder(args.embeddings)
    texts = [text for text, _ in corpus]
    vectors = embedder.embed(texts)
    train_config = classifier.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, seed=args.seed
    )
    head = classifier.train_linear_head(
        [vectors[i] for i in split.train],
        [corpus[i][1] for i in split.train],
        train_config,
    )
    print(f"final training loss: {head.final_loss:.4f}")
    predictions = [
        classifier.predict_linear(head, vectors[i])[0] for i in split.test
    ]
    gold = [corpus[i][1] for i in split.test]
    _print_metrics(classifier.evaluate(predictions, gold))
    if args.out:
        classifier.save_linear_head(head, args.out)
        print(f"model saved to {args.out}")
    return 0


def cmd_eval_nl2sql(args: argparse.Namespace) -> int:
    config = _load_config(args)
    cases = load_cases(args.corpus)  # fail fast before opening the store
    orchestrator = build_orchestrator(config)
    report = evaluate_text_to_sql(orchestrator, cases)
    print(report.format_report())
    for result in report.results:
        if not result.passed:
            print(f"  FAIL [{result.case.stratum}] {result.case.question}: {result.detail}")
    return 0


def cmd_chat(args: argparse.Namespace) -> int:
    config = _load_config(args)
    orchestrator = build_orchestrator(config)
    session_id = orchestrator.create_session()
    print(f"session {session_id} (:q to quit)")
    while True:
        try:
            line = input("you> ")
        except EOFError:
            break
        text = line.strip()
        if not text:
            continue
        if text in (":q", ":quit", "exit"):
            break
        turn = orchestrator.handle_turn(session_id, text)
        badge = f" [{turn.question_type}]" if turn.question_type else ""
        print(f"agent{badge}> {turn.agent_text}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pubbie")
    parser.add_argument("--config", help="path to a key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--debug", action="store_true", help="include stage traces in responses")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("ingest", help="ingest a CSV into the configured store")
    p.add_argument("csv")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-nb", help="train the bag-of-words classifier")
    p.add_argument("csv", help="CSV with a program label column")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the fitted model here")
    p.set_defaults(func=cmd_train_nb)

    p = sub.add_parser("train-head", help="train the embedding linear head")
    p.add_argument("csv", help="CSV with a program label column")
    p.add_argument("--embeddings", required=True, help="embedding cache JSONL")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the fitted model here")
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("eval-nl2sql", help="score text-to-SQL on a case corpus")
    p.add_argument("corpus", help="line-delimited JSON case file")
    p.set_defaults(func=cmd_eval_nl2sql)

    p = sub.add_parser("chat", help="interactive console chat")
    p.set_defaults(func=cmd_chat)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PubbieError as exc:
        print(f"{exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"IO_ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
