from .local_search import (
    SearchHyper,
    ClientState,
    step_w,
    step_alpha,
    arch_gradient,
    client_local_search,
    client_local_train,
    evaluate,
    dump_logits,
)
