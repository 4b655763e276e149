# Encoder, attention fuser, decoder and refiner
