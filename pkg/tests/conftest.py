import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ehrtext import synthgen
from ehrtext.ingest import ingest_site
from ehrtext.manifest import parse_manifest


@pytest.fixture(scope="session")
def small_sites(tmp_path_factory):
    """Three small sibling sites (en/nl/de, shared schema and seeds)."""
    out = tmp_path_factory.mktemp("synth_small")
    config = synthgen.GeneratorConfig(
        sites=(
            synthgen.SiteSpec("en_a", "en", 80, schema_variant=0, vocabulary_seed=7),
            synthgen.SiteSpec("nl_a", "nl", 80, schema_variant=0, vocabulary_seed=7),
            synthgen.SiteSpec("de_a", "de", 80, schema_variant=0, vocabulary_seed=7),
        ),
        signal_strength=0.9,
        noise_seed=11,
    )
    truth = synthgen.generate(config, out)
    return out, config, truth


@pytest.fixture(scope="session")
def small_stores(small_sites):
    out, config, _ = small_sites
    return {
        site.site_id: ingest_site(parse_manifest(out / site.site_id / "manifest.json"))
        for site in config.sites
    }
