TINY = {
    "data.n_per_class": "60",
    "model.depth": "2",
    "model.width": "16",
    "model.gp_hidden_dim": "64",
    "trainer.epochs": "20",
    "ood.n": "30",
}
