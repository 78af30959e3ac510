#!/usr/bin/env python3
"""Regenerate the shipped bad-movies fixtures.

Writes fixtures/movies.csv, the scenario manifests, and the replay cache by
driving a record-mode session against the scripted stub provider. Output is
deterministic; run after changing prompt templates (stale keys otherwise).
"""

import json
import shutil
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from stub_provider import BAD_MOVIES_QUERY, make_movies_csv, make_transport  # noqa: E402

from provoscope.gateway import ProviderConfig  # noqa: E402
from provoscope.scenario import Mode  # noqa: E402
from provoscope.service import ServiceConfig, ShortlistService  # noqa: E402


def write_manifests(scenario_dir: Path) -> None:
    base = {
        "mode": "replay",
        "auto_upload_filename": "../movies.csv",
        "cache_dir": "../cache",
    }
    auto = dict(base, display_name="bad-movies", analyze_factors_immediately=True)
    manual = dict(base, display_name="bad-movies-manual", analyze_factors_immediately=False)
    (scenario_dir / "bad-movies.json").write_text(json.dumps(auto, indent=2) + "\n")
    (scenario_dir / "bad-movies-manual.json").write_text(json.dumps(manual, indent=2) + "\n")


def main() -> None:
    fixtures = ROOT / "fixtures"
    cache_dir = fixtures / "cache"
    scenario_dir = fixtures / "scenarios"
    if cache_dir.exists():
        shutil.rmtree(cache_dir)
    scenario_dir.mkdir(parents=True, exist_ok=True)

    movies = make_movies_csv()
    (fixtures / "movies.csv").write_bytes(movies)
    write_manifests(scenario_dir)

    config = ServiceConfig(
        provider=ProviderConfig(retry_backoff=0),
        transport=make_transport(),
        mode_override=Mode.RECORD,
        cache_dir=cache_dir,
    )
    service = ShortlistService(config)
    session = service.create_session()
    service.upload_dataset(session, movies, "movies.csv")
    service.run_query(session, BAD_MOVIES_QUERY)
    for factor in list(session.factors):
        service.analyze(session, factor.id)
    body = service.shortlist(session)

    entries = sorted(cache_dir.glob("*.json"))
    top = body["entries"][0]
    print(f"recorded {len(entries)} cache entries under {cache_dir}")
    print(f"top-ranked row {top['row_id']} with score {top['score']}")


if __name__ == "__main__":
    main()
