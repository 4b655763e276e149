# SVG chart emission
