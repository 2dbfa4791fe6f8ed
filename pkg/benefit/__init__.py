"""Budget-constrained potential-benefit targeting toolkit."""
