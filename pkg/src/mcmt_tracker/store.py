import os
from threading import get_ident

from loguru import logger
from sqlalchemy import Float, Integer, String, create_engine, func, select
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import DeclarativeBase, Mapped, Session, mapped_column, sessionmaker

from .errors import DataIntegrityError
from .evaluation import MetricReport

class StoreError(DataIntegrityError):
    pass

class Base(DeclarativeBase):
    pass

class AblationRecord(Base):
    __tablename__ = "ablation_records"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    scenario: Mapped[str] = mapped_column(String(64), nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    variant: Mapped[str] = mapped_column(String(64), nullable=False)
    idf1: Mapped[float] = mapped_column(Float, nullable=False)
    idp: Mapped[float] = mapped_column(Float, nullable=False)
    idr: Mapped[float] = mapped_column(Float, nullable=False)
    mota: Mapped[float] = mapped_column(Float, nullable=False)
    idsw: Mapped[int] = mapped_column(Integer, nullable=False)
    fp: Mapped[int] = mapped_column(Integer, nullable=False)
    fn: Mapped[int] = mapped_column(Integer, nullable=False)

class ResultStore:
    """
    SQLite store of per-seed ablation results.

    Sessions are kept per thread; entering the store while a session is
    already open on the same thread reuses it.
    """
    def __init__(self, path: str | os.PathLike):
        self.path = str(path)
        self.engine = create_engine(f"sqlite:///{self.path}")

        self._sessionmaker = sessionmaker(bind=self.engine)
        self._nested_contexts: dict[int, int] = {}
        self._connections: dict[int, Session] = {}

        try:
            Base.metadata.create_all(bind=self.engine)
        except SQLAlchemyError as exc:
            raise StoreError(f"Could not open result store '{self.path}': {exc}")

    @property
    def connection(self) -> Session | None:
        return self._connections.get(get_ident())

    def close(self, thread_id: int):
        self._connections[thread_id].close()
        del self._connections[thread_id]
        del self._nested_contexts[thread_id]

    def dispose(self):
        self.engine.dispose()

    def __enter__(self) -> Session:
        thread_id = get_ident()
        self._nested_contexts[thread_id] = self._nested_contexts.get(thread_id, 0) + 1

        if thread_id in self._connections:
            return self._connections[thread_id]

        self._connections[thread_id] = self._sessionmaker()
        return self._connections[thread_id]

    def __exit__(self, exc_type, exc_val, exc_tb):
        thread_id = get_ident()
        nested_contexts = self._nested_contexts.get(thread_id, 1) - 1
        self._nested_contexts[thread_id] = nested_contexts

        if nested_contexts == 0:
            self.close(thread_id)

    def record(self, scenario: str, seed: int, variant: str, report: MetricReport):
        with self as session:
            session.add(
                AblationRecord(
                    scenario=scenario,
                    seed=seed,
                    variant=variant,
                    idf1=report.idf1,
                    idp=report.idp,
                    idr=report.idr,
                    mota=report.mota,
                    idsw=report.idsw,
                    fp=report.fp,
                    fn=report.fn,
                )
            )
            try:
                session.commit()
            except SQLAlchemyError as exc:
                session.rollback()
                raise StoreError(f"Could not store result for {variant}: {exc}")

        logger.trace(f"Stored {scenario} seed {seed} {variant}")

    def count(self) -> int:
        with self as session:
            return session.execute(select(func.count(AblationRecord.id))).scalar_one()

    def summary(self) -> list[tuple[str, str, int, float, float, float]]:
        """
        Mean IDF1, MOTA and IDSW per (scenario, variant).

        :returns:   (scenario, variant, runs, idf1, mota, idsw) rows ordered
                    by scenario, then variant
        """
        stmt = (
            select(
                AblationRecord.scenario,
                AblationRecord.variant,
                func.count(AblationRecord.id),
                func.avg(AblationRecord.idf1),
                func.avg(AblationRecord.mota),
                func.avg(AblationRecord.idsw),
            )
            .group_by(AblationRecord.scenario, AblationRecord.variant)
            .order_by(AblationRecord.scenario, AblationRecord.variant)
        )

        with self as session:
            return [
                (scenario, variant, int(runs), float(idf1), float(mota), float(idsw))
                for scenario, variant, runs, idf1, mota, idsw in session.execute(stmt)
            ]
