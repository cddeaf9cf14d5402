class InvalidInputError(ValueError):
    pass


class InvalidConfigError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, term: str, epoch: int, checkpoint=None):
        self.term = term
        self.epoch = epoch
        self.checkpoint = checkpoint
        msg = f"non-finite {term} at epoch {epoch}"
        if checkpoint is not None:
            msg += f"; last good checkpoint at {checkpoint}"
        super().__init__(msg)
