"""Small model sizes and configs shared by the slower tests."""
from graphfm.evaluation import LinkDecoderConfig, ProbeConfig
from graphfm.methods import MethodConfig
from graphfm.runner import ExperimentConfig
from graphfm.samplers import SamplerConfig

SMALL_PARAMS = {
    "gbt": dict(emb_dim=16),
    "cca_ssg": dict(hid_dim=16),
    "bgrl": dict(hidden=16, pred_hidden=16),
    "gca": dict(num_hidden=16, proj_hidden=16),
    "graphmae": dict(num_hidden=16, num_heads=2),
    "s2gae": dict(dim_hidden=16, decode_channels=16),
}


def small_method(method, lr=5e-3, **params):
    return MethodConfig(method, lr=lr, params={**SMALL_PARAMS[method], **params})


def small_experiment(method, strategy="full", dataset="", method_cfg=None, batch_size=64, num_clusters=4, **kw):
    sampler = SamplerConfig(strategy, batch_size=batch_size, fanouts=(5, 5), num_clusters=num_clusters,
                            clusters_per_batch=1)
    settings = dict(max_epochs=10, eval_every=5, patience=5, seeds=(0,),
                    probe=ProbeConfig(hidden=(16,), epochs=60, patience=20),
                    link=LinkDecoderConfig(decode_channels_lp=16, epochs=30, eval_every=10),
                    cluster_restarts=3)
    settings.update(kw)
    return ExperimentConfig(dataset=dataset, method=method_cfg or small_method(method), sampler=sampler, **settings)
