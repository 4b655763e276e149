# Adam, lr schedule and the three-phase trainer
