# evaluation package

