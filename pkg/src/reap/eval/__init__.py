from .metrics import cem, exact_match, normalize, token_f1

__all__ = ["cem", "exact_match", "normalize", "token_f1"]
