# Reverse-mode autodiff engine
