from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from Denoiser.denoiser_contract import Denoiser
from Guidance.guidance import GuidanceParams
from Sampler.length_model import LengthModel
from Sampler.sampler import SamplerParams, Template, generate
from SafeGrammar.fragment_algebra import CutRule, fragment_sequence, fragment_spans
from SafeGrammar.safe_parser import parse_ids
from SafeGrammar.token_table import DEFAULT_TABLE, DIGIT_SYMBOLS, TokenTable


@dataclass
class Remasked:
    template: Template
    span: Optional[Tuple[int, int]]


def _ids(x: Union[str, Sequence[int]], table: TokenTable):
    return table.tokenize(x) if isinstance(x, str) else [int(tok) for tok in x if tok != table.pad_id]


def remask_view(x_init: Union[str, Sequence[int]], table: TokenTable = DEFAULT_TABLE) -> List[int]:
    """x_init rewritten one fragment per '.'-delimited block, cut at every non-ring single bond."""
    g = parse_ids(_ids(x_init, table), table=table)
    return table.tokenize(fragment_sequence(g, CutRule.R_REMASK))


def fragment_remask(x_init: Union[str, Sequence[int]], length_model: LengthModel, rng: np.random.Generator,
                    table: TokenTable = DEFAULT_TABLE, fit_digits: bool = False) -> Remasked:
    """Rewrite x_init one fragment per block, then swap one uniformly chosen block for m masks, m ~ length_model.

    With ``fit_digits`` m is drawn from the lengths that leave room for one atom plus every pairing
    digit of the removed block. ``span`` is the replaced block in the rewritten sequence.
    """
    ids = remask_view(x_init, table)
    spans = fragment_spans(ids, table)
    start, end = spans[int(rng.integers(len(spans)))]
    minimum = 1
    if fit_digits:
        minimum += sum(table.token(tok) in DIGIT_SYMBOLS for tok in ids[start:end])
    m = length_model.sample(rng, minimum)
    template = Template(ids[:start] + [table.mask_id] * m + ids[end:], table)
    return Remasked(template, (start, end))


def token_remask(x_init: Union[str, Sequence[int]], k: int, rng: np.random.Generator,
                 table: TokenTable = DEFAULT_TABLE) -> Remasked:
    ids = np.array(_ids(x_init, table), dtype=np.int64)
    if not 0 <= k <= ids.size:
        raise ValueError(f"cannot remask {k} of {ids.size} tokens")
    ids[rng.choice(ids.size, size=k, replace=False)] = table.mask_id
    return Remasked(Template(ids, table), None)


def remask_and_regenerate(denoiser: Denoiser, x_init, length_model: LengthModel, params: SamplerParams,
                          rng: np.random.Generator, guidance: Optional[GuidanceParams] = None,
                          guide_rng: Optional[np.random.Generator] = None,
                          fit_digits: bool = False) -> Tuple[np.ndarray, Remasked]:
    """One fragment-level resampling move: remask a fragment and let the sampler fill it back in."""
    remasked = fragment_remask(x_init, length_model, rng, denoiser.table, fit_digits)
    ids = generate(denoiser, remasked.template, params, guidance, rng=rng, guide_rng=guide_rng)
    return ids, remasked
