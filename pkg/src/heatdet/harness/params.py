"""Per-module parameter accounting."""
import numpy as np

from ..model import Detector


def count_parameters(cfg):
    """Rows of (module, count) with a final total row; the decoder stack is split from its heads."""
    m = Detector(cfg, np.random.default_rng(0))
    rows = [
        ("backbone", sum(x.num_parameters() for x in (m.conv1, m.conv2, m.conv3))),
        ("lsconv", m.lsconv.num_parameters() if m.lsconv is not None else 0),
        ("dense_heads", sum(x.num_parameters() for x in (m.cls_hidden, m.cls_out, m.box_hidden, m.box_out) if x is not None)),
        ("heatmap_predictor", m.predictor.num_parameters()),
        ("encoder", m.encoder.num_parameters()),
        ("query_source", m.query_proj.num_parameters() if cfg.hqr_enabled
         else m.query_embed.size + m.anchor_logits.size),
        ("decoder_stack", m.decoder.stack_parameters()),
        ("decoder_heads", m.decoder.heads.num_parameters()),
    ]
    total = sum(n for _, n in rows)
    if total != m.num_parameters():
        raise RuntimeError("per-module rows do not cover every parameter")
    return rows + [("total", total)]
