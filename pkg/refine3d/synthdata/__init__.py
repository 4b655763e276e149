# Procedural shapes, renderer and dataset codecs
