"""Retrieval post-processing toolkit backed by a C++ core."""

from ._core import (
    FusionRuntimeError,
    SparseRowMatrix,
    ValidationError,
    aqe_expand,
    ap_at_k,
    arcface_loss,
    circle_loss,
    combined_loss,
    dba_augment,
    diffuse,
    ensemble_features,
    fuse_scores,
    generate_synthetic,
    gradcheck,
    jaccard_distance,
    kd_distill_loss,
    knn_search,
    kreciprocal_rerank,
    l2_normalize,
    load_features,
    load_labels,
    load_sparse,
    load_submission,
    map_at_k,
    pca,
    rank_topk,
    run_pipeline,
    save_features,
    save_sparse,
    tta_aggregate,
    verify_manifest,
    write_submission,
)

__all__ = [name for name in dir() if not name.startswith("_")]
