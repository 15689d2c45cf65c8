import pytest

from egocf import synthgen, textcf

SMALL_WORLD = synthgen.WorldSpec(h=32, w=32, glyph_size=12, noise_level=0.05, n_frames=4)
SMALL_MODEL = {"d": 32, "n_video_layers": 1, "n_text_layers": 1, "patch_size": 8, "text_len": 12}


def default_extra_tokens():
    lex = textcf.SynonymLexicon.from_tsv(textcf.DEFAULT_LEXICON)
    table = textcf.SwapTable.from_tsv(textcf.DEFAULT_SWAP_TABLE)
    return sorted(lex.tokens() | table.tokens())


def make_dataset_dir(path, n_train=48, n_test=24, seed=0, world=SMALL_WORLD):
    extra = default_extra_tokens()
    for split, n in (("train", n_train), ("test", n_test)):
        if n:
            ds = synthgen.build_split(world, n, seed, split, extra_tokens=extra, k_choices=(2, 3))
            synthgen.write_dataset(ds, path)
    return path


@pytest.fixture(scope="session")
def small_data_dir(tmp_path_factory):
    """48 train / 24 test records on a 32x32 world; shared across tests."""
    return make_dataset_dir(tmp_path_factory.mktemp("smalldata"))
