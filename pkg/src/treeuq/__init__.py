"""Decision-tree ensembles with vote-consistency uncertainty evaluation.

Two ensemble techniques over one shared binary-tree representation:

- `mcmc`: reversible-jump Metropolis-Hastings sampling of trees with
  independent restarts, pooled into a posterior-averaged classifier.
- `forest`: greedy induction randomized over the top information-gain
  splits at every node.

Both emit per-point vote histograms that `envelope` turns into
confident-correct / confident-incorrect / uncertain outcome rates, and
`bench` orchestrates the synthetic and CSV benchmark protocols behind the
`treeuq` command-line interface.
"""

__version__ = "0.1.0"
