"""Templates for the fragment-constrained generation tasks: frozen input fragments plus masked chunks."""
from typing import List, Optional, Sequence

import numpy as np

from Sampler.length_model import LengthModel
from Sampler.sampler import Template
from SafeGrammar.canonical import serialize
from SafeGrammar.fragment_algebra import add_random_attachments
from SafeGrammar.grammar_errors import GrammarError
from SafeGrammar.mol_dataclass import MolGraph
from SafeGrammar.safe_parser import parse
from SafeGrammar.token_table import DEFAULT_TABLE, TokenTable

TEMPLATE_TASKS = ("denovo", "linker", "motif_extension", "scaffold_decoration", "superstructure")
MAX_SUPERSTRUCTURE_ATTACHMENTS = 2


class TemplateError(ValueError):
    pass


def split_fragments(text: str) -> List[str]:
    return [part for part in text.split(".") if part]


def _parse_fragment(text: str, table: TokenTable) -> MolGraph:
    try:
        return parse(text, table=table)
    except GrammarError as e:
        raise TemplateError(f"input fragment {text!r} does not parse: {e}")


def _chunk(length_model: Optional[LengthModel], mask_length: int, rng: np.random.Generator,
           table: TokenTable) -> List[int]:
    m = mask_length if mask_length > 0 else length_model.sample(rng)
    return [table.mask_id] * m


def _join(blocks: Sequence[List[int]], table: TokenTable) -> List[int]:
    ids: List[int] = []
    for n, block in enumerate(blocks):
        if n:
            ids.append(table.separator_id)
        ids.extend(block)
    return ids


def denovo_template(length_model: LengthModel, rng: np.random.Generator, mask_length: int = 0,
                    table: TokenTable = DEFAULT_TABLE) -> Template:
    return Template(_chunk(length_model, mask_length, rng, table), table)


def linker_template(side_a: str, side_b: str, length_model: Optional[LengthModel], rng: np.random.Generator,
                    mask_length: int = 0, table: TokenTable = DEFAULT_TABLE) -> Template:
    """side_a, a masked linker block, side_b; each side must carry exactly one open attachment."""
    for side in (side_a, side_b):
        n = len(_parse_fragment(side, table).attachments)
        if n != 1:
            raise TemplateError(f"linker side chain {side!r} has {n} attachment points, needs exactly 1")
    return Template(_join([table.tokenize(side_a), _chunk(length_model, mask_length, rng, table),
                           table.tokenize(side_b)], table), table)


def extension_template(core: str, length_model: Optional[LengthModel], rng: np.random.Generator,
                       mask_length: int = 0, per_attachment: bool = False,
                       table: TokenTable = DEFAULT_TABLE) -> Template:
    """The core followed by one masked block, or one per open attachment when ``per_attachment``."""
    n = len(_parse_fragment(core, table).attachments)
    if n < 1:
        raise TemplateError(f"fragment {core!r} has no attachment point to extend from")
    chunks = [_chunk(length_model, mask_length, rng, table) for _ in range(n if per_attachment else 1)]
    return Template(_join([table.tokenize(core)] + chunks, table), table)


def superstructure_template(substructure: str, length_model: Optional[LengthModel], rng: np.random.Generator,
                            mask_length: int = 0, table: TokenTable = DEFAULT_TABLE) -> Template:
    """Open random attachment points on a closed substructure, then mask one block per point."""
    g = _parse_fragment(substructure, table)
    if g.attachments:
        raise TemplateError(f"substructure {substructure!r} already has open attachments")
    count = int(rng.integers(1, MAX_SUPERSTRUCTURE_ATTACHMENTS + 1))
    opened = add_random_attachments(g, count, rng)
    if not opened.attachments:
        raise TemplateError(f"substructure {substructure!r} has no spare valence")
    chunks = [_chunk(length_model, mask_length, rng, table) for _ in opened.attachments]
    return Template(_join([table.tokenize(serialize(opened))] + chunks, table), table)


def build_template(task: str, fragments: Sequence[str], length_model: Optional[LengthModel],
                   rng: np.random.Generator, mask_length: int = 0, table: TokenTable = DEFAULT_TABLE) -> Template:
    if mask_length <= 0 and length_model is None:
        raise TemplateError("either a mask length or a length model is needed")
    match task:
        case "denovo":
            return denovo_template(length_model, rng, mask_length, table)
        case "linker":
            if len(fragments) != 2:
                raise TemplateError(f"linker design takes two side chains, got {len(fragments)}")
            return linker_template(fragments[0], fragments[1], length_model, rng, mask_length, table)
        case "motif_extension" | "scaffold_decoration":
            if len(fragments) != 1:
                raise TemplateError(f"{task} takes one input fragment, got {len(fragments)}")
            return extension_template(fragments[0], length_model, rng, mask_length,
                                      per_attachment=task == "scaffold_decoration", table=table)
        case "superstructure":
            if len(fragments) != 1:
                raise TemplateError(f"superstructure generation takes one substructure, got {len(fragments)}")
            return superstructure_template(fragments[0], length_model, rng, mask_length, table)
        case _:
            raise TemplateError(f"task {task!r} has no generation template; choose from {list(TEMPLATE_TASKS)}")


def build_templates(task: str, fragments: Sequence[str], n: int, length_model: Optional[LengthModel],
                    rng: np.random.Generator, mask_length: int = 0,
                    table: TokenTable = DEFAULT_TABLE) -> List[Template]:
    return [build_template(task, fragments, length_model, rng, mask_length, table) for _ in range(n)]


def frozen_preserved(template: Template, ids: Sequence[int]) -> bool:
    ids = np.asarray(ids)
    keep = ~template.masked
    return len(ids) == len(template.ids) and bool(np.all(ids[keep] == template.ids[keep]))
