__ALL__ = ["tensor", "codec", "model", "training", "forge", "cli"]
